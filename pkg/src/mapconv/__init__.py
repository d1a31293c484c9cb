"""Convolution through explicit sampling maps.

A sampling map tells a convolution where to read: every kernel slot of every
output location resolves to at most four weighted input taps.  Plain grid
convolution is the special case whose map reads the regular neighborhood;
spherical layouts (equirectangular, cube map, icosphere vertices) become
ordinary convolutions once their geometry is baked into a map.
"""

from .bench import BenchRecord, random_sample_map, run_benchmark, write_csv
from .conv import (
    ConvParams,
    GradientCheckResult,
    gradient_check,
    grid_conv_backward_input,
    grid_conv_backward_params,
    grid_conv_reference,
    grid_im2col,
    mapped_conv_backward_input,
    mapped_conv_backward_params,
    mapped_conv_forward,
    mapped_im2col,
    naive_gemm,
    random_params,
)
from .errors import (
    DimensionError,
    FormatError,
    InvalidCoordinateError,
    MapconvError,
    ParameterError,
)
from .icosphere import (
    FaceHit,
    IcosphereMesh,
    barycentric_taps,
    expected_counts,
    load_vtxt,
    locate_face,
    locate_faces,
    make_icosphere,
    make_isea_map,
    mean_neighbor_angle,
    mesh_edges,
    resample_equirect_to_vertices,
    resample_vertices_to_equirect,
    save_obj,
    save_vtxt,
    sph_to_unit_vectors,
    unit_vectors_to_sph,
    vertex_voronoi_areas,
)
from .pfm import read_pfm, write_pfm
from .projections import (
    CubeFace,
    CubeFaceCoord,
    EquirectGeometry,
    SphericalCoord,
    cube_face_to_sph,
    cube_face_to_sph_arrays,
    cubemap_sample_coords,
    equirect_sample_coords,
    equirect_to_sph_arrays,
    inverse_equirect,
    inverse_gnomonic,
    make_cubemap_map,
    make_equirect_map,
    normalize_sph_arrays,
    pixel_solid_angles,
    resample_cube_to_equirect,
    resample_equirect_to_cube,
    sph_to_cube_face,
    sph_to_cube_face_arrays,
    sph_to_equirect_arrays,
)
from .sample_map import (
    KernelSpec,
    Sample,
    SampleMap,
    SampleTap,
    kernel_offsets,
    load_map,
    make_grid_map,
    make_shuffle_map,
    save_map,
)

__version__ = "0.1.0"

__all__ = [
    "BenchRecord", "random_sample_map", "run_benchmark", "write_csv",
    "ConvParams", "GradientCheckResult", "gradient_check",
    "grid_conv_backward_input", "grid_conv_backward_params",
    "grid_conv_reference", "grid_im2col", "mapped_conv_backward_input",
    "mapped_conv_backward_params", "mapped_conv_forward", "mapped_im2col",
    "naive_gemm", "random_params",
    "DimensionError", "FormatError", "InvalidCoordinateError",
    "MapconvError", "ParameterError",
    "FaceHit", "IcosphereMesh", "barycentric_taps", "expected_counts",
    "load_vtxt", "locate_face", "locate_faces", "make_icosphere",
    "make_isea_map", "mean_neighbor_angle", "mesh_edges",
    "resample_equirect_to_vertices", "resample_vertices_to_equirect",
    "save_obj", "save_vtxt", "sph_to_unit_vectors", "unit_vectors_to_sph",
    "vertex_voronoi_areas",
    "read_pfm", "write_pfm",
    "CubeFace", "CubeFaceCoord", "EquirectGeometry", "SphericalCoord",
    "cube_face_to_sph", "cube_face_to_sph_arrays", "cubemap_sample_coords",
    "equirect_sample_coords", "equirect_to_sph_arrays",
    "inverse_equirect", "inverse_gnomonic",
    "make_cubemap_map", "make_equirect_map", "normalize_sph_arrays",
    "pixel_solid_angles", "resample_cube_to_equirect",
    "resample_equirect_to_cube", "sph_to_cube_face",
    "sph_to_cube_face_arrays", "sph_to_equirect_arrays",
    "KernelSpec", "Sample", "SampleMap", "SampleTap", "kernel_offsets",
    "load_map", "make_grid_map", "make_shuffle_map", "save_map",
    "__version__",
]
