"""Scenario data: Moving-MNIST synthesis, corruptions and the DIVE1 container."""
from .container import DataFormatError, read_dataset, read_header, write_dataset
from .elastic import ElasticDeformParams, elastic_deform
from .scenarios import (
    OUT_OF_SCENE, PARTIAL_OCCLUSION, SCENARIOS, VARYING_APPEARANCE, VideoSample,
    apply_out_of_scene, apply_partial_occlusion, apply_varying_appearance,
    make_batch, make_sample, stack, synthesize_clean, visibility_mask,
)
