from .hand import (HandMesh, HandParams, NUM_KEYPOINTS, NUM_PARAMS, NUM_VERTS,
                   hand_forward, hand_forward_np, hand_mesh, hand_template)
from .kernels import (chamfer, closest_point_on_mesh, contact_mask, fps_sample,
                      inside_mesh, nearest_neighbor_indices,
                      point_mesh_distances, winding_numbers)
from .mesh import (GeometryError, PointCloud, TriangleMesh, box, cylinder,
                   load_cloud_csv, load_obj, load_ply, merge_meshes,
                   sample_surface, save_cloud_csv, save_obj, save_ply, torus,
                   uv_sphere)
from .voxel import VoxelGrid, penetration_volume, voxelize_inside

__all__ = [n for n in dir() if not n.startswith("_")]
