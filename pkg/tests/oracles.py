"""Independent reference computations used by the tests."""

import numpy as np
from scipy.integrate import solve_ivp


def trajectory_deflection(rho, g, gamma, amp, rc, mass=1.0, span=10.0):
    """Deflection from brute-force integration of the planar relative motion.

    The relative coordinate starts at z = -span*rc with offset rho and
    velocity g along +z; the force is the untruncated inverse-power force
    inside rc and zero outside.  The run is split at the cutoff crossings
    so the integrator never steps over the force discontinuity.
    """
    def rhs(t, y):
        x, z, vx, vz = y
        r = np.hypot(x, z)
        if r >= rc:
            return [vx, vz, 0.0, 0.0]
        a = (2.0 / mass) * gamma * amp * r ** (-gamma - 2.0)
        return [vx, vz, a * x, a * z]

    def leave(t, y):
        return np.hypot(y[0], y[1]) - rc

    y = np.array([rho, -span * rc, 0.0, g])
    # free flight to the sphere
    if rho < rc:
        z_entry = -np.sqrt(rc * rc - rho * rho)
        y = np.array([rho, z_entry, 0.0, g])
        leave.terminal = True
        leave.direction = 1.0
        t_max = 1e3 * rc / g + 1e3
        sol = solve_ivp(rhs, (0.0, t_max), y, method="DOP853", rtol=1e-13, atol=1e-14,
                        events=leave)
        y = sol.y[:, -1]
    v_out = y[2:]
    cosang = v_out[1] / np.linalg.norm(v_out)
    return float(np.arccos(np.clip(cosang, -1.0, 1.0)))


def maxwell_moment_ode(sigma0, m4_0, nu, times):
    """Centred second-moment tensor and fourth moment under isotropic
    constant-rate (pseudo-Maxwell) collisions, integrated with LSODA at
    tight tolerance.

    dSigma/dt = -(nu/2) (Sigma - tr(Sigma)/3 I)
    dM4/dt    = nu [ (2/3) M4 + (2/3) M2^2 - (1/3) tr(Sigma^2) - M4 ]

    with M2 = tr(Sigma) and M4 = <|c|^4>.  Returns M4 at ``times``.
    """
    def rhs(t, y):
        S = y[:9].reshape(3, 3)
        m4 = y[9]
        m2 = np.trace(S)
        dS = -0.5 * nu * (S - m2 / 3.0 * np.eye(3))
        dm4 = nu * ((2.0 / 3.0) * m4 + (2.0 / 3.0) * m2 * m2
                    - np.trace(S @ S) / 3.0 - m4)
        return np.concatenate([dS.ravel(), [dm4]])

    y0 = np.concatenate([np.asarray(sigma0, float).ravel(), [m4_0]])
    sol = solve_ivp(rhs, (0.0, max(times)), y0, method="LSODA", t_eval=sorted(times),
                    rtol=1e-12, atol=1e-14)
    return sol.y[9]


def _stencil(points, lo, h, n):
    """Flat node indices (k, 15) and weights (k, 15) of the energy-preserving
    projection of unit masses at ``points``: trilinear weights plus a
    second-difference correction around the nearest node.  Rows whose
    stencil leaves the grid are flagged in the returned mask."""
    x = (points - lo) / h
    base = np.floor(x).astype(np.int64)
    t = x - base
    cen = np.floor(x + 0.5).astype(np.int64)
    ok = np.all((base >= 0) & (base <= n - 2) & (cen >= 1) & (cen <= n - 2), axis=1)
    flat = lambda ijk: (ijk[:, 0] * n + ijk[:, 1]) * n + ijk[:, 2]
    nodes, weights = [], []
    for corner in np.ndindex(2, 2, 2):
        c = np.array(corner)
        nodes.append(flat(base + c))
        weights.append(np.prod(np.where(c == 1, t, 1.0 - t), axis=1))
    delta = -np.sum(t * (1.0 - t), axis=1) / 6.0
    nodes.append(flat(cen))
    weights.append(-6.0 * delta)
    for d in range(3):
        for s in (1, -1):
            e = np.zeros(3, dtype=np.int64)
            e[d] = s
            nodes.append(flat(cen + e))
            weights.append(delta)
    return np.stack(nodes, axis=1), np.stack(weights, axis=1), ok


def brute_force_collision_operator(values, cutoff, kernel, n_density, mu, mass=1.0,
                                   n_angular=8, n_phi=8):
    """Loop over p of the conservative discrete collision operator, with the
    partner momentum, scattering node and azimuth handled as array axes.

    Every collision is projected with its own stencil and added into a
    dense output, independent of the compiled operator.
    """
    f = np.asarray(values, float)
    n = f.shape[0]
    fl = f.ravel()
    axis = np.linspace(-cutoff, cutoff, n)
    h = axis[1] - axis[0]
    pts = np.array([axis[list(i)] for i in np.ndindex(n, n, n)])
    m = len(pts)
    out = np.zeros(m)
    pref = n_density * mu * mu * h ** 3
    phis = 2.0 * np.pi * (np.arange(n_phi) + 0.5) / n_phi
    angular = {}
    for i in range(m):
        if fl[i] == 0.0:
            continue
        js = np.array([j for j in range(m) if j != i and fl[j] != 0.0])
        g = pts[i] - pts[js]
        gn = np.linalg.norm(g, axis=1)
        gh = g / gn[:, None]
        a = np.zeros_like(gh)
        a[np.arange(len(gh)), np.argmin(np.abs(gh), axis=1)] = 1.0
        e1 = np.cross(gh, a)
        e1 /= np.linalg.norm(e1, axis=1)[:, None]
        e2 = np.cross(gh, e1)
        keys = np.rint(gn * gn / (h * h)).astype(int)
        chis = np.empty((len(js), n_angular))
        ws = np.empty((len(js), n_angular))
        for r, key in enumerate(keys):
            if key not in angular:
                angular[key] = kernel.angular_nodes(gn[r] / mass, n_angular)
            chis[r], ws[r] = angular[key]
        # outgoing relative momenta, shape (partners, angular, azimuth, 3)
        c, s = np.cos(chis)[..., None, None], np.sin(chis)[..., None, None]
        ring = (np.cos(phis)[None, None, :, None] * e1[:, None, None, :]
                + np.sin(phis)[None, None, :, None] * e2[:, None, None, :])
        o = gn[:, None, None, None] * (c * gh[:, None, None, :] + s * ring)
        P = (pts[i] + pts[js])[:, None, None, :]
        amount = pref * ws / n_phi * fl[i] * fl[js][:, None]
        amount = np.broadcast_to(amount[..., None], o.shape[:3]).reshape(-1)
        n1, w1, ok1 = _stencil((0.5 * (P + o)).reshape(-1, 3), -cutoff, h, n)
        n2, w2, ok2 = _stencil((0.5 * (P - o)).reshape(-1, 3), -cutoff, h, n)
        keep = ok1 & ok2
        half = 0.5 * amount[keep]
        np.add.at(out, n1[keep].ravel(), (half[:, None] * w1[keep]).ravel())
        np.add.at(out, n2[keep].ravel(), (half[:, None] * w2[keep]).ravel())
        out[i] -= half.sum()
        partner = np.broadcast_to(js[:, None, None], o.shape[:3]).reshape(-1)[keep]
        np.add.at(out, partner, -half)
    return out.reshape(f.shape)
