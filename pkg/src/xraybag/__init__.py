"""Synthetic X-ray baggage datasets: protocol-driven scenes, dual-energy renders,
captions, instruction files, and scoring of model outputs."""

from .captions import generate_caption, load_pools, rouge_l, validate_corpus
from .composer import ProtocolConfig, compose_scene, enumerate_grid, occluders_for
from .evaluate import EvalReport, grounding_acc, iou, parse_grounded, parse_labels, score_multilabel, vqa_score
from .instruct import NormBox, decode_box, encode_box, normalize_box
from .render import bbox_of, colorize, fuse, project, render, rotate_volume, threat_mask, transmit
from .scene import MaterialClass, PlacedItem, SceneMetadata, SceneSpec, ThreatCategory, VoxelVolume, voxelize

__version__ = "0.1.0"
