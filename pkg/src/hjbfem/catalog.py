"""Built-in benchmark problems and their meshes."""
from __future__ import annotations

import numpy as np

from .mesh import Mesh, build_interval_mesh, build_patterned_rectangle_mesh
from .problem import ControlProblem

EIKONAL_DOMAIN = (-1.0, 1.0)


def eikonal_1d() -> ControlProblem:
    """Two-control transport problem -v_t + |v_x| = 1 on (-1, 1).

    Controls are the drift directions +1 and -1; no diffusion, no
    reaction, unit source, zero final data, horizon 1.  The value
    function is min(1 - t, 1 - |x|).
    """
    return ControlProblem(
        controls=(1.0, -1.0),
        diffusion=(0.0, 0.0),
        drift=((1.0,), (-1.0,)),
        reaction=(0.0, 0.0),
        source=(1.0, 1.0),
        final_data=0.0,
        horizon=1.0,
        dimension=1,
    )


def eikonal_1d_mesh(n_elements: int) -> Mesh:
    return build_interval_mesh(*EIKONAL_DOMAIN, n_elements)


def eikonal_exact(t, x) -> float:
    x = np.asarray(x, dtype=float).reshape(1)
    return min(1.0 - t, 1.0 - abs(float(x[0])))


def eikonal_exact_gradient(t, x) -> np.ndarray:
    x = float(np.asarray(x, dtype=float).reshape(1)[0])
    if 1.0 - abs(x) < 1.0 - t:  # spatial branch active
        return np.array([-np.sign(x)])
    return np.array([0.0])


def controlled_diffusion_2d() -> ControlProblem:
    """Two-control diffusion problem on the equilateral unit-square mesh.

    One strongly diffusive control against a drift-dominated one with
    reaction and a cheaper running cost; the maximizing control varies
    over the domain, which exercises genuine policy switching.
    """
    return ControlProblem(
        controls=(0, 1),
        diffusion=(1.0, 0.3),
        drift=((0.0, 0.0), (0.8, 0.3)),
        reaction=(0.0, 0.4),
        source=(1.0, 0.5),
        final_data=0.0,
        horizon=0.5,
        dimension=2,
    )


def controlled_diffusion_2d_mesh(nx: int = 6) -> Mesh:
    return build_patterned_rectangle_mesh((0.0, 0.0, 1.0, 1.0), nx, nx,
                                          "equilateral")


def smooth_diffusion_1d() -> ControlProblem:
    """Single-control heat problem with smooth compatible final data.

    a = 1, no drift, no reaction, unit source, final data sin(pi x) on
    (0, 1); the uniformly elliptic regime used for gradient-convergence
    measurements.
    """
    return ControlProblem(
        controls=("heat",),
        diffusion=(1.0,),
        drift=((0.0,),),
        reaction=(0.0,),
        source=(1.0,),
        final_data=lambda x: float(np.sin(np.pi * x[0])),
        horizon=0.25,
        dimension=1,
    )


def smooth_diffusion_1d_mesh(n_elements: int) -> Mesh:
    return build_interval_mesh(0.0, 1.0, n_elements)


BUILTIN_PROBLEMS = {
    "eikonal1d": eikonal_1d,
    "diffusion2d": controlled_diffusion_2d,
    "smooth1d": smooth_diffusion_1d,
}
