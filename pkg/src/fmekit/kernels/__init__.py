"""Tree kernels: compiled extension when built, numpy otherwise.

Both backends implement the same two functions with identical float
semantics; ``BACKEND`` reports which one is active.
"""

from fmekit.kernels import _pytree

try:
    from fmekit.kernels import _ctree as _impl

    BACKEND = "compiled"
except ImportError:
    _impl = _pytree
    BACKEND = "python"

best_split_pos = _impl.best_split_pos
tree_apply = _impl.tree_apply


def available_backends() -> dict[str, object]:
    """Backend name -> kernel module, for benchmarks and parity tests."""
    out = {"python": _pytree}
    if _impl is not _pytree:
        out["compiled"] = _impl
    return out
