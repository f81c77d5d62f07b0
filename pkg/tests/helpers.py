"""Shared oracle helpers for the test suite."""

import numpy as np

# Central differences of a ReLU network loss are exact (the loss is
# quadratic in any single parameter while the activation pattern is fixed)
# but meaningless when the +-h interval crosses an activation-pattern
# boundary.  Glorot/ReLU stacks this deep have pre-activations spanning
# six orders of magnitude, so kinks sit arbitrarily close to the check
# point: a fixed h = 1e-4 crosses one for a few percent of parameters,
# and shrinking h in double precision runs into subtractive cancellation
# (noise ~ eps*|L|/h) before it escapes the kink.  The ladder below
# therefore escalates to smaller steps evaluated in extended precision;
# a genuinely wrong gradient fails at every rung.
FD_LADDER = (
    (1e-4, np.float64),
    (1e-5, np.float64),
    (1e-6, np.longdouble),
    (1e-7, np.longdouble),
    (1e-8, np.longdouble),
)
FD_DEFAULT_STEP = FD_LADDER[0][0]


def fd_check_param(loss_fn, param, index, analytic, tol=1e-4, ladder=FD_LADDER):
    """Compare one parameter's gradient against central differences.

    ``loss_fn(dtype)`` must evaluate the loss at the current parameter
    values in the given precision.  Returns (passed, step_used,
    relative_error); a step below the ladder head means the default step
    crossed a ReLU kink or hit the double-precision noise floor.
    """
    rel = np.inf
    h = ladder[-1][0]
    for h, dtype in ladder:
        orig = param[index]
        param[index] = orig + h
        up = loss_fn(dtype)
        param[index] = orig - h
        down = loss_fn(dtype)
        param[index] = orig
        numeric = float((up - down) / np.asarray(2.0 * h, dtype=dtype))
        rel = abs(numeric - analytic) / max(abs(numeric), abs(analytic), 1e-8)
        if rel < tol:
            return True, h, rel
    return False, h, rel


def fd_check_all(loss_fn, params_with_grads, tol=1e-4):
    """Check every entry of every (param, grad) pair.

    Returns (n_checked, n_escalated, worst_rel, failures) where failures
    lists (param_index, flat_index, rel_error) of entries that disagreed
    at every rung of the ladder.
    """
    checked = escalated = 0
    worst = 0.0
    failures = []
    for pi, (param, grad) in enumerate(params_with_grads):
        flat_p = param.reshape(-1)
        flat_g = grad.reshape(-1)
        for j in range(flat_p.size):
            ok, step, rel = fd_check_param(loss_fn, flat_p, j, flat_g[j], tol=tol)
            checked += 1
            if ok:
                worst = max(worst, rel)
            if step != FD_DEFAULT_STEP:
                escalated += 1
            if not ok:
                failures.append((pi, j, rel))
    return checked, escalated, worst, failures
