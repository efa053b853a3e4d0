"""Offline synthesis of the terminal ingredients (Qf, K) for the cooling example.

Solves the robust LMI for an ellipsoidal invariant set under the local gain K:

    Vf(x) = x' Qf x,  Vf((A(w) + B(w) K) x) - Vf(x) <= -(x' Q x + x' K' R K x)  for all w,

while keeping {x' Qf x <= eps} inside the stacked state and input constraints.
The resulting matrices are pasted into `crates/core/src/model.rs` and verified there.

Usage: python3 scripts/terminal_lmi.py [d]
"""

import sys

import cvxpy as cp
import numpy as np


def cooling_a(w, d):
    return np.array([[1 + (w - 1) / d, 0.01], [0.01, 1 + 2.5 * (w - 1) / d]])


def main():
    d = int(sys.argv[1]) if len(sys.argv) > 1 else 3
    nx = nu = 2
    Q = np.eye(nx)
    R = 1e3 * np.eye(nu)
    H = np.vstack([np.eye(nx), np.ones((1, nx))])
    h = np.array([1.0, 1.0, 0.5])
    u_max = 1.5

    S = cp.Variable((nx, nx), symmetric=True)
    Y = cp.Variable((nu, nx))
    gamma = cp.Variable()
    qh = np.sqrt(Q)
    rh = np.sqrt(R)
    cons = [S >> 1e-6 * np.eye(nx)]
    for w in range(1, d + 1):
        A = cooling_a(w, d)
        B = np.eye(nx)
        M = A @ S + B @ Y
        lmi = cp.bmat(
            [
                [S, M.T, S @ qh, Y.T @ rh],
                [M, S, np.zeros((nx, nx)), np.zeros((nx, nu))],
                [qh @ S, np.zeros((nx, nx)), gamma * np.eye(nx), np.zeros((nx, nu))],
                [rh @ Y, np.zeros((nu, nx)), np.zeros((nu, nx)), gamma * np.eye(nu)],
            ]
        )
        cons.append((lmi + lmi.T) / 2 >> 0)
        for i in range(H.shape[0]):
            row = H[i : i + 1, :] @ M
            blk = cp.bmat([[np.array([[h[i] ** 2]]), row], [row.T, S]])
            cons.append((blk + blk.T) / 2 >> 0)
    for j in range(nu):
        row = Y[j : j + 1, :]
        blk = cp.bmat([[np.array([[u_max**2]]), row], [row.T, S]])
        cons.append((blk + blk.T) / 2 >> 0)

    prob = cp.Problem(cp.Maximize(cp.log_det(S) - 1e-6 * gamma), cons)
    prob.solve(solver=cp.CLARABEL)
    Sv = S.value
    K = Y.value @ np.linalg.inv(Sv)
    # small inflation turns the LMI solution into a strict Lyapunov certificate
    Qf = 1.01 * gamma.value * np.linalg.inv(Sv)
    Qf = (Qf + Qf.T) / 2

    worst = -np.inf
    for w in range(1, d + 1):
        Acl = cooling_a(w, d) + K
        M = Acl.T @ Qf @ Acl - Qf + Q + K.T @ R @ K
        worst = max(worst, np.linalg.eigvalsh(M).max())
    np.set_printoptions(precision=17)
    print("status", prob.status, "gamma", gamma.value)
    print("Qf =", repr(Qf))
    print("K =", repr(K))
    print("max Lyapunov eigenvalue", worst)


if __name__ == "__main__":
    main()
