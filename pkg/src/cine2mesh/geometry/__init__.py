"""Surface-mesh representation and geometric algorithms."""
from .mesh import (
    CHAMBERS,
    STRUCTURES,
    AdjacencyGraph,
    MeshError,
    MeshVideo,
    SurfaceMesh,
    adjacency,
    ejection_fraction,
    enclosed_volume,
    load_mesh,
    save_mesh,
    volume_curve,
)
from .metrics import (
    average_surface_distance,
    closest_points_on_mesh,
    nearest_neighbor_distances,
    point_cloud_asd,
    point_to_mesh_distances,
    refine_alignment_to_surface,
    sample_surface_points,
)
from .registration import (
    DegenerateGeometryError,
    IcpResult,
    RigidTransform,
    icp_align,
    procrustes,
)
from .slicing import (
    LABEL_IDS,
    Contour,
    ContourSet,
    SlicePlane,
    load_contours,
    rasterize,
    save_contours,
    slice_mesh,
)

__all__ = [
    "CHAMBERS",
    "STRUCTURES",
    "LABEL_IDS",
    "AdjacencyGraph",
    "Contour",
    "ContourSet",
    "DegenerateGeometryError",
    "IcpResult",
    "MeshError",
    "MeshVideo",
    "RigidTransform",
    "SlicePlane",
    "SurfaceMesh",
    "adjacency",
    "average_surface_distance",
    "closest_points_on_mesh",
    "ejection_fraction",
    "enclosed_volume",
    "icp_align",
    "load_contours",
    "load_mesh",
    "nearest_neighbor_distances",
    "point_cloud_asd",
    "point_to_mesh_distances",
    "procrustes",
    "rasterize",
    "refine_alignment_to_surface",
    "sample_surface_points",
    "save_contours",
    "save_mesh",
    "slice_mesh",
    "volume_curve",
]
