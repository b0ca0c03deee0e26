from spinsplat.rendering.rasterizer import RenderGrads, render_backward, render_splats
from spinsplat.rendering.reference import (
    Dataset, DatasetEntry, SyntheticScene, default_scene, generate_dataset, render_reference,
)

__all__ = [
    'RenderGrads', 'render_backward', 'render_splats',
    'Dataset', 'DatasetEntry', 'SyntheticScene', 'default_scene', 'generate_dataset',
    'render_reference',
]
