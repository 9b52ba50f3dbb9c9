"""Euclidean gamma matrices in a chiral (DeGrand-Rossi) basis.

Entries are restricted to {0, +-1, +-i}, so all Clifford identities hold
exactly in floating point.  gamma5 = gx gy gz gt = diag(1, 1, -1, -1);
spins (0, 1) and (2, 3) form the two chiral blocks.

======  ==========================================
 mu      rows of gamma_mu
======  ==========================================
 x       (0,0,0,i) (0,0,i,0) (0,-i,0,0) (-i,0,0,0)
 y       (0,0,0,-1) (0,0,1,0) (0,1,0,0) (-1,0,0,0)
 z       (0,0,i,0) (0,0,0,-i) (-i,0,0,0) (0,i,0,0)
 t       (0,0,1,0) (0,0,0,1) (1,0,0,0) (0,1,0,0)
======  ==========================================
"""
import numpy as np

_i = 1j

GAMMA = np.array(
    [
        [[0, 0, 0, _i], [0, 0, _i, 0], [0, -_i, 0, 0], [-_i, 0, 0, 0]],
        [[0, 0, 0, -1], [0, 0, 1, 0], [0, 1, 0, 0], [-1, 0, 0, 0]],
        [[0, 0, _i, 0], [0, 0, 0, -_i], [-_i, 0, 0, 0], [0, _i, 0, 0]],
        [[0, 0, 1, 0], [0, 0, 0, 1], [1, 0, 0, 0], [0, 1, 0, 0]],
    ],
    dtype=np.complex128,
)
GAMMA5 = GAMMA[0] @ GAMMA[1] @ GAMMA[2] @ GAMMA[3]
IDENTITY4 = np.eye(4, dtype=np.complex128)

# Spin projectors of the hopping term: index mu for the forward hop
# (1 - gamma_mu), index 4 + mu for the backward hop (1 + gamma_mu).
HOP_PROJECTORS = np.concatenate([IDENTITY4 - GAMMA, IDENTITY4 + GAMMA])


def sigma(mu: int, nu: int) -> np.ndarray:
    """sigma_{mu nu} = (i/2) [gamma_mu, gamma_nu]."""
    return 0.5j * (GAMMA[mu] @ GAMMA[nu] - GAMMA[nu] @ GAMMA[mu])
