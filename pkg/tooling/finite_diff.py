"""Central finite differences over every entry of every model parameter."""

import torch


@torch.no_grad()
def numeric_grads(model, loss_fns, h=1e-6):
    """``loss_fns`` maps name -> zero-arg callable returning a scalar tensor.

    Returns ``{loss_name: {param_name: grad tensor}}``; every loss is evaluated
    from the same perturbed forward state.
    """
    out = {name: {} for name in loss_fns}
    for pname, p in model.named_parameters():
        grads = {name: torch.zeros_like(p) for name in loss_fns}
        flat = p.view(-1)
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + h
            plus = {n: float(f()) for n, f in loss_fns.items()}
            flat[i] = orig - h
            minus = {n: float(f()) for n, f in loss_fns.items()}
            flat[i] = orig
            for n in loss_fns:
                grads[n].view(-1)[i] = (plus[n] - minus[n]) / (2 * h)
        for n in loss_fns:
            out[n][pname] = grads[n]
    return out


def max_relative_error(analytic, numeric, floor=1e-6):
    """max |a - n| / max(|a|, |n|, floor) over all entries."""
    worst = 0.0
    for name, a in analytic.items():
        n = numeric[name]
        denom = torch.maximum(torch.maximum(a.abs(), n.abs()), torch.full_like(a, floor))
        worst = max(worst, float(((a - n).abs() / denom).max()))
    return worst
