"""Declarative network specs, the GhostNet and VGG-16 builders, and ghostify.

Spec files are line oriented, one layer per line::

    # GhostNet stem
    input c=3 h=224 w=224
    classes n=1000
    conv out=16 k=3 stride=2
    bn
    relu
    gbneck exp=48 out=24 se=0 stride=2 s=2 d=3

``input``, ``classes`` and ``alpha`` are directives; every other line is a
layer. Unspecified keys take the defaults in :data:`LAYER_KINDS`.
"""
import math
from dataclasses import dataclass, field, replace

from .errors import SpecError
from .ops import conv_output_size

# kind -> (file token, {key: default}); a default of None marks a required key
LAYER_KINDS = {
    "conv": ("conv", {"out": None, "k": 3, "stride": 1, "pad": None, "bias": 0}),
    "ghost_module": ("ghost", {"out": None, "k": 1, "stride": 1, "pad": None, "s": 2, "d": 3,
                               "relu": 1, "bn": 1, "bias": 0}),
    "ghost_bneck": ("gbneck", {"exp": None, "out": None, "se": 0, "stride": 1, "s": 2, "d": 3, "dw": 3}),
    "bn": ("bn", {}),
    "relu": ("relu", {}),
    "avgpool": ("avgpool", {"k": 0, "stride": 0}),
    "flatten": ("flatten", {}),
    "fc": ("fc", {"out": None, "bias": 1}),
}
_TOKEN_TO_KIND = {tok: kind for kind, (tok, _) in LAYER_KINDS.items()}
_TOKEN_TO_KIND.update({kind: kind for kind in LAYER_KINDS})

# (#exp, #out, SE, stride) for the 16 bottlenecks of GhostNet
GHOSTNET_BNECKS = (
    (16, 16, 0, 1),
    (48, 24, 0, 2),
    (72, 24, 0, 1),
    (72, 40, 1, 2),
    (120, 40, 1, 1),
    (240, 80, 0, 2),
    (200, 80, 0, 1),
    (184, 80, 0, 1),
    (184, 80, 0, 1),
    (480, 112, 1, 1),
    (672, 112, 1, 1),
    (672, 160, 1, 2),
    (960, 160, 0, 1),
    (960, 160, 1, 1),
    (960, 160, 0, 1),
    (960, 160, 1, 1),
)
GHOSTNET_STEM = 16
GHOSTNET_HEAD = (960, 1280)

VGG16_WIDTHS = (64, 64, "pool", 128, 128, "pool", 256, 256, 256, "pool",
                512, 512, 512, "pool", 512, 512, 512, "pool")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    params: dict = field(default_factory=dict)

    @classmethod
    def make(cls, kind, **params):
        kind = _TOKEN_TO_KIND.get(kind, kind)
        if kind not in LAYER_KINDS:
            raise SpecError(f"unknown layer kind {kind!r}")
        defaults = LAYER_KINDS[kind][1]
        unknown = set(params) - set(defaults)
        if unknown:
            raise SpecError(f"{kind}: unknown keys {sorted(unknown)}")
        merged = dict(defaults)
        merged.update(params)
        missing = [k for k, v in merged.items() if v is None and k != "pad"]
        if missing:
            raise SpecError(f"{kind}: missing required keys {missing}")
        if "pad" in merged and merged["pad"] is None:
            merged["pad"] = (merged["k"] - 1) // 2
        for k, v in merged.items():
            if not isinstance(v, int) or isinstance(v, bool):
                raise SpecError(f"{kind}: {k}={v!r} must be an integer")
        return cls(kind, merged)

    def __getitem__(self, key):
        return self.params[key]

    def with_params(self, **params):
        merged = dict(self.params)
        merged.update(params)
        return LayerSpec(self.kind, merged)

    def to_line(self):
        tok = LAYER_KINDS[self.kind][0]
        return " ".join([tok] + [f"{k}={v}" for k, v in self.params.items()])

    def describe(self):
        p = self.params
        if self.kind == "conv":
            return f"conv{p['k']}x{p['k']}-{p['out']}-s{p['stride']}"
        if self.kind == "ghost_module":
            return f"ghost{p['k']}x{p['k']}-{p['out']}-s{p['stride']}-r{p['s']}d{p['d']}"
        if self.kind == "ghost_bneck":
            se = "-se" if p["se"] else ""
            return f"gbneck-{p['exp']}-{p['out']}-s{p['stride']}{se}"
        if self.kind == "fc":
            return f"fc-{p['out']}"
        if self.kind == "avgpool":
            return "avgpool-global" if p["k"] == 0 else f"avgpool{p['k']}x{p['k']}"
        return self.kind


@dataclass(frozen=True)
class NetworkSpec:
    layers: tuple
    input_shape: tuple = (3, 224, 224)
    num_classes: int | None = None
    width_multiplier: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        if not self.width_multiplier > 0:
            raise SpecError(f"width multiplier must be > 0, got {self.width_multiplier}")

    def with_input(self, height, width=None):
        c = self.input_shape[0]
        return replace(self, input_shape=(c, height, width if width is not None else height))

    def shapes(self):
        return validate(self)


def _layer_out_shape(layer, shape, index):
    p = layer.params
    kind = layer.kind

    def need_map():
        if len(shape) != 3:
            raise SpecError(f"{kind} needs a (c, h, w) input, got flattened features {shape}", index)

    if kind in ("conv", "ghost_module"):
        need_map()
        c, h, w = shape
        if kind == "ghost_module":
            if not 1 <= p["s"] <= p["out"]:
                raise SpecError(f"ghost ratio s={p['s']} must be within [1, out={p['out']}]", index)
            if p["k"] % 2 == 0 or p["d"] % 2 == 0:
                raise SpecError(f"ghost kernels must be odd, got k={p['k']} d={p['d']}", index)
        if p["out"] < 1:
            raise SpecError("out must be >= 1", index)
        try:
            oh = conv_output_size(h, p["k"], p["stride"], p["pad"])
            ow = conv_output_size(w, p["k"], p["stride"], p["pad"])
        except ValueError as exc:
            raise SpecError(str(exc), index) from None
        return (p["out"], oh, ow)
    if kind == "ghost_bneck":
        need_map()
        c, h, w = shape
        if p["stride"] not in (1, 2):
            raise SpecError(f"bottleneck stride must be 1 or 2, got {p['stride']}", index)
        for key in ("exp", "out"):
            if not 1 <= p["s"] <= p[key]:
                raise SpecError(f"ghost ratio s={p['s']} exceeds {key}={p[key]}", index)
        if p["d"] % 2 == 0 or p["dw"] % 2 == 0:
            raise SpecError("bottleneck kernels must be odd", index)
        oh = conv_output_size(h, p["dw"], p["stride"], (p["dw"] - 1) // 2)
        ow = conv_output_size(w, p["dw"], p["stride"], (p["dw"] - 1) // 2)
        return (p["out"], oh, ow)
    if kind == "bn":
        need_map()
        return shape
    if kind == "relu":
        return shape
    if kind == "avgpool":
        need_map()
        c, h, w = shape
        if p["k"] == 0:
            return (c, 1, 1)
        stride = p["stride"] or p["k"]
        try:
            return (c, conv_output_size(h, p["k"], stride, 0), conv_output_size(w, p["k"], stride, 0))
        except ValueError as exc:
            raise SpecError(str(exc), index) from None
    if kind == "flatten":
        need_map()
        return (shape[0] * shape[1] * shape[2],)
    if kind == "fc":
        if len(shape) != 1:
            raise SpecError("fc needs flattened features; insert a flatten layer first", index)
        return (p["out"],)
    raise SpecError(f"unknown layer kind {kind!r}", index)


def validate(spec):
    """Run the shape chain; return the output shape of every layer."""
    shape = spec.input_shape
    if len(shape) != 3 or min(shape) < 1:
        raise SpecError(f"input shape must be positive (c, h, w), got {shape}")
    shapes = []
    for i, layer in enumerate(spec.layers):
        shape = _layer_out_shape(layer, shape, i)
        shapes.append(shape)
    if spec.num_classes is not None and shapes:
        if shapes[-1] != (spec.num_classes,):
            raise SpecError(f"network ends in {shapes[-1]}, expected ({spec.num_classes},) logits",
                            len(spec.layers) - 1)
    return shapes


# -- text format ---------------------------------------------------------------

def _parse_kv(tokens, lineno):
    out = {}
    for tok in tokens:
        if "=" not in tok:
            raise SpecError(f"expected key=value, got {tok!r}", line=lineno)
        key, val = tok.split("=", 1)
        out[key] = val
    return out


def parse_spec(text):
    layers = []
    input_shape = (3, 224, 224)
    num_classes = None
    alpha = 1.0
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        head, *rest = line.split()
        kv = _parse_kv(rest, lineno)
        try:
            if head == "input":
                input_shape = (int(kv["c"]), int(kv["h"]), int(kv["w"]))
            elif head == "classes":
                num_classes = int(kv["n"])
            elif head == "alpha":
                alpha = float(kv["value"])
            else:
                try:
                    params = {k: int(v) for k, v in kv.items()}
                except ValueError as exc:
                    raise SpecError(f"non-integer value ({exc})", len(layers), lineno) from None
                try:
                    layers.append(LayerSpec.make(head, **params))
                except SpecError as exc:
                    raise SpecError(str(exc), len(layers), lineno) from None
        except KeyError as exc:
            raise SpecError(f"{head}: missing key {exc}", line=lineno) from None
        except ValueError as exc:
            if isinstance(exc, SpecError):
                raise
            raise SpecError(f"{head}: {exc}", line=lineno) from None
    return NetworkSpec(tuple(layers), input_shape, num_classes, alpha)


def format_spec(spec):
    c, h, w = spec.input_shape
    lines = [f"input c={c} h={h} w={w}"]
    if spec.num_classes is not None:
        lines.append(f"classes n={spec.num_classes}")
    if spec.width_multiplier != 1.0:
        lines.append(f"alpha value={spec.width_multiplier!r}")
    lines.extend(layer.to_line() for layer in spec.layers)
    return "\n".join(lines) + "\n"


def load_spec(path):
    with open(path) as f:
        return parse_spec(f.read())


def save_spec(path, spec):
    with open(path, "w") as f:
        f.write(format_spec(spec))


# -- builders -----------------------------------------------------------------

def round_width(width, alpha, divisor=4):
    """Scale ``width`` by ``alpha`` to the nearest multiple of ``divisor`` (ties up, min ``divisor``)."""
    if not (alpha > 0 and math.isfinite(alpha)):
        raise SpecError(f"width multiplier must be a positive finite number, got {alpha}")
    scaled = math.floor(width * alpha / divisor + 0.5) * divisor
    return max(divisor, scaled)


def build_ghostnet(alpha=1.0, num_classes=1000, input_size=224, in_channels=3,
                   small_input=None, ratio=2, cheap_kernel=3):
    """GhostNet as a :class:`NetworkSpec`.

    With ``small_input`` (default: ``input_size < 112``) the stem runs at
    stride 1 and the first two stride-2 bottlenecks run at stride 1, so a
    32x32 image reaches the head as 8x8 maps.
    """
    if not (alpha > 0 and math.isfinite(alpha)):
        raise SpecError(f"width multiplier must be a positive finite number, got {alpha}")
    if small_input is None:
        small_input = input_size < 112
    L = LayerSpec.make
    stem = round_width(GHOSTNET_STEM, alpha)
    layers = [L("conv", out=stem, k=3, stride=1 if small_input else 2), L("bn"), L("relu")]
    demoted = 0
    for exp, out, se, stride in GHOSTNET_BNECKS:
        if small_input and stride == 2 and demoted < 2:
            stride = 1
            demoted += 1
        layers.append(L("gbneck", exp=round_width(exp, alpha), out=round_width(out, alpha),
                        se=se, stride=stride, s=ratio, d=cheap_kernel))
    head, feat = (round_width(w, alpha) for w in GHOSTNET_HEAD)
    layers += [
        L("conv", out=head, k=1), L("bn"), L("relu"),
        L("avgpool"),
        L("conv", out=feat, k=1, bias=1), L("relu"),
        L("flatten"),
        L("fc", out=num_classes),
    ]
    spec = NetworkSpec(tuple(layers), (in_channels, input_size, input_size), num_classes, alpha)
    validate(spec)
    return spec


def build_vgg16(num_classes=10, input_size=32, in_channels=3, alpha=1.0):
    """13-conv / 1-FC VGG-16 variant for 32x32 inputs, each conv followed by BN + ReLU.

    Downsampling uses 2x2 average pooling.
    """
    L = LayerSpec.make
    layers = []
    for w in VGG16_WIDTHS:
        if w == "pool":
            layers.append(L("avgpool", k=2, stride=2))
        else:
            layers += [L("conv", out=round_width(w, alpha), k=3), L("bn"), L("relu")]
    layers += [L("flatten"), L("fc", out=num_classes)]
    spec = NetworkSpec(tuple(layers), (in_channels, input_size, input_size), num_classes, alpha)
    validate(spec)
    return spec


def build_tiny(num_classes=10, input_size=28, in_channels=1):
    """Small two-bottleneck Ghost CNN for desk-scale training runs."""
    L = LayerSpec.make
    layers = [
        L("conv", out=16, k=3), L("bn"), L("relu"),
        L("gbneck", exp=32, out=24, stride=2),
        L("gbneck", exp=48, out=32, se=1, stride=2),
        L("avgpool"), L("flatten"),
        L("fc", out=num_classes),
    ]
    spec = NetworkSpec(tuple(layers), (in_channels, input_size, input_size), num_classes)
    validate(spec)
    return spec


ARCHITECTURES = {
    "ghostnet": build_ghostnet,
    "vgg16": build_vgg16,
    "tiny": build_tiny,
}


def ghostify(spec, s=2, d=3):
    """Replace every conv layer with more than one filter by a Ghost module.

    The replacement keeps ``out``, ``k``, ``stride``, ``pad`` and ``bias`` and
    carries no internal BN or ReLU, so whatever followed the conv in the
    spec still follows it. Ghost modules are not convs, so applying this
    twice is the same as applying it once.
    """
    layers = []
    for layer in spec.layers:
        if layer.kind == "conv" and layer["out"] > 1:
            p = layer.params
            layers.append(LayerSpec.make("ghost_module", out=p["out"], k=p["k"], stride=p["stride"],
                                         pad=p["pad"], s=s, d=d, relu=0, bn=0, bias=p["bias"]))
        else:
            layers.append(layer)
    out = replace(spec, layers=tuple(layers))
    validate(out)
    return out
