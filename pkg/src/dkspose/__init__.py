"""Edge-point voting pose estimation with dynamic keypoint selection, on numpy."""

from .errors import (ConfigurationError, DegenerateCorrespondenceError, DksPoseError, EmptyInputError,
                     GeometryError, TrainingDivergedError, ValidationError)
from .geometry import (CameraIntrinsics, PointCloud, RigidTransform, backproject, compose, fit_rigid, invert,
                       project, read_d16, rotation_error, transform_points, write_d16)
from .keypoints import (FeatureMap, KeypointSet, select_dynamic_keypoints, select_dynamic_keypoints_per_instance,
                        select_edge_points, select_fps)
from .losses import (PointRoleWeights, center_offset_loss, edge_offset_loss, focal_semantic_loss,
                     multi_task_loss)
from .metrics import EvalReport, add, add01d_rate, add_of, add_s, auc, keypoint_error, miou
from .objects import ObjectModel, load_model, save_model
from .pipeline import PipelineConfig, TimingBreakdown, run_bench, run_estimate, run_eval
from .synth import NoiseConfig, SceneSample, make_model, oracle_predictions, random_scene, render_scene
from .voting import InstanceHypothesis, PredictionField, cluster_instances, estimate_pose, mean_shift, vote_edge_points

__version__ = "0.1.0"
