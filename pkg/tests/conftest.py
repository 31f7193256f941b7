import numpy as np
import pytest

from mctpath.ocean import CurrentField
from mctpath.planner import PlannerEnv, TrainingConfig, train

# 45/50/55 m are the operating depths; 55 m is strictly best.
THREE_DEPTH_SPEEDS = {40.0: 1.3, 45.0: 1.4, 50.0: 1.5, 55.0: 1.7, 60.0: 1.2}
ORACLE_HORIZON = 24

ORACLE_TRAINING = TrainingConfig(
    horizon=ORACLE_HORIZON,
    episodes=2000,
    z_min=45.0,
    z_max=55.0,
    learning_rate=1e-2,
    lr_final=1e-3,
    decay=0.01,
    target_sync=100,
    exploring_starts=True,
    seed=0,
)


def three_depth_field():
    depths = np.array(sorted(THREE_DEPTH_SPEEDS))
    speeds = np.array([THREE_DEPTH_SPEEDS[z] for z in depths])
    return CurrentField(depths, [0.0, 86400.0], np.repeat(speeds[:, None], 2, axis=1))


def value_iteration(env: PlannerEnv, horizon, gamma):
    """Finite-horizon backward induction; returns ``Q[(z, k)] -> array``."""
    zs = [float(z) for z in env.grid_depths()]
    V = {z: 0.0 for z in zs}
    Q = {}
    for k in range(horizon - 1, -1, -1):
        V_new = {}
        for z in zs:
            mask = env.mask(z)
            q = np.full(len(env.actions), -np.inf)
            for i, a in enumerate(env.actions):
                if mask[i]:
                    tail = 0.0 if k == horizon - 1 else gamma * V[z + a]
                    q[i] = env.reward_for(z, k, i) + tail
            Q[(z, k)] = q
            V_new[z] = q.max()
        V = V_new
    return Q


def greedy_rollout(planner, env, z0, horizon):
    from mctpath.planner import greedy_action

    z, total, path = z0, 0.0, []
    for k in range(horizon):
        a = greedy_action(planner, env, z, k)
        r, z = env.step(z, k, a)
        total += r
        path.append(z)
    return total, path


@pytest.fixture(scope="session")
def oracle_planner():
    planner, history = train(lambda rng: three_depth_field(), ORACLE_TRAINING)
    return planner, history


def enumerate_qp(H, f, G, h):
    """Brute-force QP oracle: first active set whose KKT point is feasible."""
    import itertools

    n, m = len(f), len(h)
    for k in range(min(n, m) + 1):
        for S in itertools.combinations(range(m), k):
            S = list(S)
            GS = G[S]
            K = np.block([[H, GS.T], [GS, np.zeros((k, k))]])
            try:
                sol = np.linalg.solve(K, np.concatenate([-f, h[S]]))
            except np.linalg.LinAlgError:
                continue
            w, lam = sol[:n], sol[n:]
            if np.all(G @ w <= h + 1e-9) and np.all(lam >= -1e-9):
                return w
    return None


def random_qp(rng):
    n = int(rng.integers(1, 7))
    m = int(rng.integers(0, 9))
    M = rng.standard_normal((n, n))
    H = M @ M.T + 0.1 * np.eye(n)
    f = 3.0 * rng.standard_normal(n)
    G = rng.standard_normal((m, n))
    h = G @ rng.standard_normal(n) + rng.uniform(0.0, 1.0, m)
    return H, f, G, h
