"""Parameter and FLOP accounting.

One FLOP is one multiply-accumulate (MAC): a convolution producing ``n``
maps of size ``h' x w'`` from ``c`` channels with a ``k x k`` kernel costs
``n * h' * w' * c * k * k``. The headline FLOP figure counts conv and FC
MACs only; batch norm, activations, pooling, residual adds and the SE
block's small FC layers go to a separate auxiliary column.
"""
import csv
import math
from dataclasses import dataclass, field
from fractions import Fraction

from .arch import validate


def flops_conv(n, h_out, w_out, c, k):
    return n * h_out * w_out * c * k * k


def flops_ghost_module(n, h_out, w_out, c, k, s, d):
    """MACs of a Ghost module with ``s | n``: primary conv plus ``(s-1)`` cheap depthwise maps per intrinsic map."""
    if n % s:
        raise ValueError(f"closed form needs s | n (n={n}, s={s}); count the layer spec instead")
    m = n // s
    return m * h_out * w_out * c * k * k + (s - 1) * m * h_out * w_out * d * d


def speedup_ratio(c, k, d, s, exact=False):
    """Theoretical conv-to-Ghost speed-up ``c k^2 / (c k^2 / s + (s-1) d^2 / s)``."""
    r = Fraction(c * k * k) / (Fraction(c * k * k, s) + Fraction((s - 1) * d * d, s))
    return r if exact else float(r)


def compression_ratio(c, k, d, s, exact=False):
    """Theoretical parameter compression; ``n`` cancels, leaving the same form as the speed-up."""
    r = Fraction(c * k * k) / (Fraction(c * k * k, s) + Fraction((s - 1) * d * d, s))
    return r if exact else float(r)


def speedup_limit(c, s):
    """Large-``c`` approximation ``s c / (s + c - 1)`` for ``d = k``."""
    return s * c / (s + c - 1)


@dataclass
class LayerCost:
    index: int
    name: str
    params: int = 0
    flops_mac: int = 0
    flops_aux: int = 0
    bn_params: int = 0
    bias_params: int = 0

    def add(self, other):
        self.params += other.params
        self.flops_mac += other.flops_mac
        self.flops_aux += other.flops_aux
        self.bn_params += other.bn_params
        self.bias_params += other.bias_params


@dataclass
class CostReport:
    per_layer: list = field(default_factory=list)

    @property
    def params(self):
        return sum(e.params for e in self.per_layer)

    @property
    def flops(self):
        return sum(e.flops_mac for e in self.per_layer)

    @property
    def flops_aux(self):
        return sum(e.flops_aux for e in self.per_layer)

    @property
    def bn_params(self):
        return sum(e.bn_params for e in self.per_layer)

    @property
    def bias_params(self):
        return sum(e.bias_params for e in self.per_layer)

    def summary_line(self):
        return f"params={self.params} flops={self.flops}"

    def detail_line(self):
        return (f"bn_params={self.bn_params} bias_params={self.bias_params} "
                f"flops_aux={self.flops_aux} flops_2x={2 * self.flops}")


# -- symbolic counting -----------------------------------------------------------

def _conv(n, c, k, h, w, bias=False, groups=1):
    return LayerCost(-1, "", params=n * (c // groups) * k * k + (n if bias else 0),
                     flops_mac=n * h * w * (c // groups) * k * k, bias_params=n if bias else 0)


def _bn(c, h, w):
    return LayerCost(-1, "", params=2 * c, flops_aux=c * h * w, bn_params=2 * c)


def _ghost(c, n, h, w, k, s, d, bn=True, relu=True, bias=False):
    m = math.ceil(n / s)
    cheap = m * (s - 1)
    total = _conv(m, c, k, h, w, bias)
    branches = [m]
    if s > 1:
        total.add(_conv(cheap, cheap, d, h, w, bias, groups=cheap))
        branches.append(cheap)
    for ch in branches:
        if bn:
            total.add(_bn(ch, h, w))
        if relu:
            total.flops_aux += ch * h * w
    return total


def _se(c, h, w, reduction=4):
    r = max(1, c // reduction)
    return LayerCost(-1, "", params=c * r + r + r * c + c, bias_params=r + c,
                     flops_aux=c * r + r * c + r + c + 2 * c * h * w)


def _bneck(c, h, w, p):
    exp, out, stride = p["exp"], p["out"], p["stride"]
    dwk = p["dw"]
    oh = (h + 2 * ((dwk - 1) // 2) - dwk) // stride + 1
    ow = (w + 2 * ((dwk - 1) // 2) - dwk) // stride + 1
    total = _ghost(c, exp, h, w, 1, p["s"], p["d"], relu=True)
    if stride > 1:
        total.add(_conv(exp, exp, dwk, oh, ow, groups=exp))
        total.add(_bn(exp, oh, ow))
    if p["se"]:
        total.add(_se(exp, oh, ow))
    total.add(_ghost(exp, out, oh, ow, 1, p["s"], p["d"], relu=False))
    if stride > 1:
        total.add(_conv(c, c, 3, oh, ow, groups=c))
        total.add(_bn(c, oh, ow))
        total.add(_conv(out, c, 1, oh, ow))
        total.add(_bn(out, oh, ow))
    elif c != out:
        total.add(_conv(out, c, 1, oh, ow))
        total.add(_bn(out, oh, ow))
    total.flops_aux += out * oh * ow
    return total


def layer_cost(layer, in_shape, out_shape):
    p = layer.params
    kind = layer.kind
    if kind == "conv":
        _, oh, ow = out_shape
        return _conv(p["out"], in_shape[0], p["k"], oh, ow, bool(p["bias"]))
    if kind == "ghost_module":
        _, oh, ow = out_shape
        return _ghost(in_shape[0], p["out"], oh, ow, p["k"], p["s"], p["d"],
                      bool(p["bn"]), bool(p["relu"]), bool(p["bias"]))
    if kind == "ghost_bneck":
        return _bneck(in_shape[0], in_shape[1], in_shape[2], p)
    if kind == "bn":
        return _bn(*in_shape)
    if kind in ("relu", "avgpool"):
        return LayerCost(-1, "", flops_aux=math.prod(in_shape))
    if kind == "flatten":
        return LayerCost(-1, "")
    if kind == "fc":
        f = in_shape[0]
        bias = p["out"] if p["bias"] else 0
        return LayerCost(-1, "", params=p["out"] * f + bias, flops_mac=p["out"] * f, bias_params=bias)
    raise ValueError(f"no cost rule for layer kind {kind!r}")


def count_spec(spec):
    """Per-layer parameter and FLOP counts for ``spec`` at its input shape."""
    shapes = validate(spec)
    in_shapes = [spec.input_shape] + shapes[:-1]
    report = CostReport()
    for i, (layer, sin, sout) in enumerate(zip(spec.layers, in_shapes, shapes)):
        entry = layer_cost(layer, sin, sout)
        entry.index = i
        entry.name = layer.describe()
        report.per_layer.append(entry)
    return report


def count_params(obj):
    """Parameter counts from a spec (symbolic) or a materialized network (array sizes)."""
    if hasattr(obj, "named_parameters"):
        report = CostReport()
        for i, (layer, module) in enumerate(zip(obj.spec.layers, obj)):
            entry = LayerCost(i, layer.describe())
            for name, arr in module.named_parameters():
                entry.params += int(arr.size)
                leaf = name.rsplit(".", 1)[-1]
                if leaf in ("gamma", "beta"):
                    entry.bn_params += int(arr.size)
                elif leaf == "bias":
                    entry.bias_params += int(arr.size)
            report.per_layer.append(entry)
        return report
    return count_spec(obj)


def count_flops(obj, input_shape=None):
    """FLOP counts; for a network this instruments a real forward pass."""
    if hasattr(obj, "layer_costs"):
        if input_shape is not None and tuple(input_shape) != obj.spec.input_shape:
            raise ValueError("a materialized network is counted at its own input shape")
        report = CostReport()
        for i, (layer, (mac, aux)) in enumerate(zip(obj.spec.layers, obj.layer_costs())):
            report.per_layer.append(LayerCost(i, layer.describe(), flops_mac=mac, flops_aux=aux))
        return report
    spec = obj if input_shape is None else obj.with_input(*input_shape[-2:])
    return count_spec(spec)


# -- reports -----------------------------------------------------------------

REPORT_COLUMNS = ["layer", "name", "params", "flops_mac", "flops_aux", "flops_2x", "bn_params", "bias_params"]


def write_report_csv(path, report):
    with open(path, "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(REPORT_COLUMNS)
        for e in report.per_layer:
            wr.writerow([e.index, e.name, e.params, e.flops_mac, e.flops_aux, 2 * e.flops_mac,
                         e.bn_params, e.bias_params])
        wr.writerow(["total", "", report.params, report.flops, report.flops_aux, 2 * report.flops,
                     report.bn_params, report.bias_params])


COMPARE_COLUMNS = ["layer", "name_a", "name_b", "params_a", "params_b", "flops_a", "flops_b",
                   "params_ratio", "flops_ratio", "theory_speedup", "theory_compression"]


def _ratio(a, b):
    if a == b:
        return 1.0
    return a / b if b else float("nan")


def compare(spec_a, spec_b):
    """Row-per-layer comparison of a baseline spec against a variant.

    Theoretical ratios are filled in wherever a conv in ``spec_a`` faces a
    Ghost module in ``spec_b`` with the same output width; the last row
    carries network totals.
    """
    ra, rb = count_spec(spec_a), count_spec(spec_b)
    rows = []
    if len(spec_a.layers) == len(spec_b.layers):
        in_shapes = [spec_a.input_shape] + validate(spec_a)[:-1]
        for la, lb, ea, eb, sin in zip(spec_a.layers, spec_b.layers, ra.per_layer, rb.per_layer, in_shapes):
            rs = rc = ""
            if la.kind == "conv" and lb.kind == "ghost_module" and la["out"] == lb["out"]:
                rs = speedup_ratio(sin[0], lb["k"], lb["d"], lb["s"])
                rc = compression_ratio(sin[0], lb["k"], lb["d"], lb["s"])
            elif la == lb:
                rs = rc = 1.0
            rows.append([ea.index, ea.name, eb.name, ea.params, eb.params, ea.flops_mac, eb.flops_mac,
                         _ratio(ea.params, eb.params), _ratio(ea.flops_mac, eb.flops_mac), rs, rc])
    rows.append(["total", "", "", ra.params, rb.params, ra.flops, rb.flops,
                 _ratio(ra.params, rb.params), _ratio(ra.flops, rb.flops), "", ""])
    return rows


def write_compare_csv(path, rows):
    with open(path, "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(COMPARE_COLUMNS)
        for row in rows:
            wr.writerow([repr(v) if isinstance(v, float) else v for v in row])
