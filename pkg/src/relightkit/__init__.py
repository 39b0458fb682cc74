"""Single-image outdoor relighting toolkit.

Pipeline: depth map -> position/normal maps -> screen-space ray-marched
depth-ratio volumes -> learned shadow casting / refinement / relighting,
with an analytic-scene renderer providing exact ground truth for every
geometric and learned stage.
"""

__version__ = "0.1.0"
