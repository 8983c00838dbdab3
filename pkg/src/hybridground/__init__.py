"""Zero-shot 3D visual grounding through rendered, prompt-annotated views and a 2D VLM."""

from .camera import CameraPose, Intrinsics, LookAtParams, look_at_view_transform, project, world_to_camera
from .evaluation import GroundingResult, MetricsReport, evaluate, iou3d, tally_error_category
from .mock import MockVLM, Rule
from .pipeline import PipelineConfig, ScenePaths, SceneStore, ablate_views, batch, ground
from .prompting import PromptStyle, VisibilityReport, candidate_set, compute_visibility, place_prompts
from .queries import QuerySpec
from .render import RenderConfig, RenderedImage, clip_ceiling, render
from .scene import (Box, ObjectLookupTable, ObjectRecord, PointCloud, SceneDescription, describe_scene,
                    load_detections, load_scene, object_points)
from .viewpoint import AnchorResolution, ViewStrategy, extract_anchor_target, resolve_anchor, select_viewpoint
from .vlm import (ChatRequest, EndpointConfig, GroundingAnswer, HttpVLM, build_anchor_prompt,
                  build_grounding_prompt, chat, parse_anchor_response, parse_grounding_response)

__version__ = "0.1.0"
