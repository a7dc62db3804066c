import logging
import os
from typing import Tuple

import fire
import numpy as np

from vortexlab.geometry import TRI_MESH, SurfaceModel, icosphere, read_off, torus_of_revolution, write_off
from vortexlab.io import log_level


class MeshTools:

    def __init__(self, output_dir: str = "meshes"):
        self.output_dir = output_dir
        os.makedirs(output_dir, exist_ok=True)

    def _write(self, name: str, vertices: np.ndarray, faces: np.ndarray) -> str:
        surface = SurfaceModel(TRI_MESH, vertices, faces, name=name)
        path = os.path.join(self.output_dir, f"{name}.off")
        write_off(path, vertices, faces)
        logging.info(f"Wrote {path}: V={len(vertices)}, F={len(faces)}, genus={surface.genus}, "
                     f"h={surface.mesh_size:.4g}")
        return path

    def icosphere(self, subdivisions: int = 4) -> str:
        v, f = icosphere(subdivisions)
        return self._write(f"icosphere_{subdivisions}", v, f)

    def ellipsoid(self, a: float = 1.0, b: float = 1.0, c: float = 0.6, subdivisions: int = 4) -> str:
        v, f = icosphere(subdivisions)
        return self._write(f"ellipsoid_{a:g}_{b:g}_{c:g}_{subdivisions}", v * np.array([a, b, c]), f)

    def torus(self, R: float = 1.0, r: float = 0.4, n_major: int = 72, n_minor: int = 24) -> str:
        v, f = torus_of_revolution(R, r, n_major, n_minor)
        return self._write(f"torus_{R:g}_{r:g}_{n_major}x{n_minor}", v, f)

    def info(self, path: str) -> Tuple[int, int, int]:
        v, f = read_off(path)
        surface = SurfaceModel(TRI_MESH, v, f, name=os.path.basename(path))
        logging.info(f"{path}: chi={surface.euler_char}, genus={surface.genus}, h={surface.mesh_size:.4g}, "
                     f"total curvature={surface.frames.total_curvature:.12f}")
        return surface.euler_char, surface.genus, len(v)


if __name__ == '__main__':
    logging.basicConfig(format='%(asctime)s : %(message)s', level=log_level())
    fire.Fire(MeshTools)
