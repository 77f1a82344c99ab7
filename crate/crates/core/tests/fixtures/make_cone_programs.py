"""Reference optima for random small cone programs (Clarabel, cross-checked with CVXOPT)."""
import json, os

import cvxpy as cp
import numpy as np

rng = np.random.default_rng(20240611)
programs = []
while len(programs) < 20:
    n = int(rng.integers(1, 5)); ml = int(rng.integers(0, 4)); k = int(rng.integers(1, 3))
    B = rng.normal(size=(n, n)); P = B @ B.T + rng.uniform(0.05, 1.0) * np.eye(n)
    q = rng.normal(scale=3.0, size=n)
    z0 = rng.normal(size=n)
    G = rng.normal(size=(ml, n)); h = G @ z0 + rng.uniform(0.1, 1.0, size=ml)
    A = rng.normal(size=(k, n)); b = rng.normal(size=k); c = rng.normal(scale=0.5, size=n)
    d = float(np.linalg.norm(A @ z0 + b) - c @ z0 + rng.uniform(0.1, 1.0))
    z = cp.Variable(n)
    cons = [cp.norm(A @ z + b) <= c @ z + d]
    if ml: cons.append(G @ z <= h)
    obj = 0.5 * cp.quad_form(z, cp.psd_wrap(P)) + q @ z
    vals = {}
    for solver, opts in [("CLARABEL", dict(tol_gap_abs=1e-10, tol_gap_rel=1e-10, tol_feas=1e-10)),
                         ("CVXOPT", dict())]:
        prob = cp.Problem(cp.Minimize(obj), cons)
        try:
            prob.solve(solver=solver, **opts)
        except cp.error.SolverError:
            break
        if prob.status != "optimal":
            break
        vals[solver] = (prob.value, z.value.copy())
    if len(vals) < 2:
        continue
    assert abs(vals["CLARABEL"][0] - vals["CVXOPT"][0]) < 1e-6, vals
    active = ml and np.max(G @ vals["CLARABEL"][1] - h) > -1e-6 or (c @ vals["CLARABEL"][1] + d - np.linalg.norm(A @ vals["CLARABEL"][1] + b)) < 1e-6
    programs.append(dict(P=P.tolist(), q=q.tolist(), G=G.tolist(), h=h.tolist(),
                         soc=dict(A=A.tolist(), b=b.tolist(), c=c.tolist(), d=d),
                         objective=vals["CLARABEL"][0], z=vals["CLARABEL"][1].tolist(), active=bool(active)))
print(sum(p["active"] for p in programs), "with an active constraint")
json.dump(programs, open(os.path.join(os.path.dirname(__file__), "cone_programs.json"), "w"), indent=1)
