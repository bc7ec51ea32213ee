import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ghostconv.arch import (GHOSTNET_BNECKS, LayerSpec, NetworkSpec, build_ghostnet, build_tiny, build_vgg16,
                            format_spec, ghostify, load_spec, parse_spec, round_width, save_spec, validate)
from ghostconv.cost import count_spec
from ghostconv.errors import SpecError

L = LayerSpec.make

# Widths of the 16 bottlenecks written out by hand: (#exp, #out, SE, stride)
TABLE = [
    (16, 16, 0, 1), (48, 24, 0, 2), (72, 24, 0, 1), (72, 40, 1, 2), (120, 40, 1, 1),
    (240, 80, 0, 2), (200, 80, 0, 1), (184, 80, 0, 1), (184, 80, 0, 1), (480, 112, 1, 1),
    (672, 112, 1, 1), (672, 160, 1, 2), (960, 160, 0, 1), (960, 160, 1, 1), (960, 160, 0, 1),
    (960, 160, 1, 1),
]


def test_ghostnet_widths_exact():
    spec = build_ghostnet(1.0)
    assert spec.layers[0].kind == "conv" and spec.layers[0]["out"] == 16 and spec.layers[0]["stride"] == 2
    bnecks = [l for l in spec.layers if l.kind == "ghost_bneck"]
    assert [(b["exp"], b["out"], b["se"], b["stride"]) for b in bnecks] == TABLE
    assert all(b["s"] == 2 and b["d"] == 3 for b in bnecks)
    convs = [l for l in spec.layers if l.kind == "conv"]
    assert [(c["out"], c["k"]) for c in convs] == [(16, 3), (960, 1), (1280, 1)]
    assert spec.layers[-1].kind == "fc" and spec.layers[-1]["out"] == 1000
    assert tuple(TABLE) == GHOSTNET_BNECKS


def test_ghostnet_shape_chain():
    shapes = validate(build_ghostnet(1.0))
    spatial = [s[1] for s in shapes if len(s) == 3]
    assert spatial[0] == 112
    assert (960, 7, 7) in shapes
    assert shapes[-1] == (1000,)


def test_half_width():
    spec = build_ghostnet(0.5)
    assert spec.layers[0]["out"] == 8
    bnecks = [l for l in spec.layers if l.kind == "ghost_bneck"]
    assert bnecks[-1]["out"] == 80
    assert bnecks[0]["exp"] == 8


@pytest.mark.parametrize("width,alpha,expected", [
    (16, 1.0, 16), (16, 0.5, 8), (24, 0.5, 12), (40, 0.5, 20), (10, 1.0, 12),  # 2.5 rounds up
    (6, 1.0, 8), (16, 0.1, 4), (160, 1.3, 208), (72, 0.75, 56),
])
def test_round_width(width, alpha, expected):
    assert round_width(width, alpha) == expected


@settings(max_examples=200, deadline=None)
@given(width=st.integers(1, 2000), alpha=st.floats(0.05, 3.0))
def test_round_width_properties(width, alpha):
    w = round_width(width, alpha)
    assert w % 4 == 0 and w >= 4
    assert w == 4 or abs(w - width * alpha) <= 2


@pytest.mark.parametrize("alpha", [0.0, -1.0, float("nan"), float("inf")])
def test_bad_alpha(alpha):
    with pytest.raises(SpecError):
        build_ghostnet(alpha)


@pytest.mark.parametrize("alpha", [0.5, 0.75, 1.0, 1.3])
def test_scaled_widths_follow_rule(alpha):
    spec = build_ghostnet(alpha)
    bnecks = [l for l in spec.layers if l.kind == "ghost_bneck"]
    for b, (exp, out, _, _) in zip(bnecks, TABLE):
        assert b["exp"] == round_width(exp, alpha)
        assert b["out"] == round_width(out, alpha)


def test_small_input_variant():
    spec = build_ghostnet(0.25, num_classes=10, input_size=32)
    assert spec.layers[0]["stride"] == 1
    shapes = validate(spec)
    pre_pool = [s for s, l in zip(shapes, spec.layers) if l.kind == "relu" and len(s) == 3]
    assert pre_pool[-2][1:] == (8, 8)
    assert shapes[-1] == (10,)


def test_vgg16_layout():
    spec = build_vgg16()
    convs = [l for l in spec.layers if l.kind == "conv"]
    assert len(convs) == 13
    assert [l.kind for l in spec.layers].count("fc") == 1
    assert validate(spec)[-1] == (10,)


def test_tiny_has_two_bottlenecks():
    spec = build_tiny()
    assert [l.kind for l in spec.layers].count("ghost_bneck") == 2
    assert validate(spec)[-1] == (10,)


# -- ghostify -----------------------------------------------------------------------

def _single_conv(n=16, k=3, c=8):
    return NetworkSpec((L("conv", out=n, k=k),), (c, 10, 10))


def test_ghostify_single_conv():
    g = ghostify(_single_conv(), s=2, d=3)
    (layer,) = g.layers
    assert layer.kind == "ghost_module"
    assert (layer["out"], layer["k"], layer["stride"], layer["pad"], layer["s"], layer["d"]) == (16, 3, 1, 1, 2, 3)
    assert layer["out"] // layer["s"] == 8


def test_ghostify_ratio_one_keeps_params():
    spec = build_vgg16()
    assert count_spec(ghostify(spec, s=1)).params == count_spec(spec).params
    assert count_spec(ghostify(spec, s=1)).flops == count_spec(spec).flops


def test_ghostify_idempotent_and_shape_preserving():
    spec = build_vgg16()
    once = ghostify(spec, 2, 3)
    assert ghostify(once, 4, 5) == once
    assert validate(once) == validate(spec)
    kinds = [(a.kind, b.kind) for a, b in zip(spec.layers, once.layers)]
    assert all(kb == "ghost_module" for ka, kb in kinds if ka == "conv")
    assert all(ka == kb for ka, kb in kinds if ka != "conv")


def test_ghostify_converts_first_conv_and_skips_single_filter():
    spec = NetworkSpec((L("conv", out=8), L("conv", out=1)), (3, 6, 6))
    g = ghostify(spec)
    assert [l.kind for l in g.layers] == ["ghost_module", "conv"]


def test_ghostify_vgg_halves_flops():
    base = count_spec(build_vgg16())
    half = count_spec(ghostify(build_vgg16(), 2, 3))
    assert base.flops / half.flops == pytest.approx(2.0, rel=0.02)


# -- spec files -----------------------------------------------------------------------

def test_parse_example_line():
    spec = parse_spec("input c=16 h=112 w=112\ngbneck exp=48 out=24 se=0 stride=2 s=2 d=3  # row 3\n")
    (layer,) = spec.layers
    assert layer.kind == "ghost_bneck"
    assert (layer["exp"], layer["out"], layer["se"], layer["stride"]) == (48, 24, 0, 2)
    assert validate(spec) == [(24, 56, 56)]


@pytest.mark.parametrize("builder", [lambda: build_ghostnet(1.0), lambda: build_ghostnet(0.5, 10, 32),
                                     build_vgg16, build_tiny, lambda: ghostify(build_vgg16(), 3, 5)])
def test_format_parse_round_trip(builder, tmp_path):
    spec = builder()
    assert parse_spec(format_spec(spec)) == spec
    path = tmp_path / "net.txt"
    save_spec(path, spec)
    assert load_spec(path) == spec


@pytest.mark.parametrize("text,index,line", [
    ("conv out=4\nbogus x=1\n", 1, 2),
    ("conv out=4 k=three\n", 0, 1),
    ("conv k=3\n", 0, 1),
    ("conv out=4 colour=1\n", 0, 1),
    ("\n# comment\nconv out=4\nrelu\nfc\n", 2, 5),
])
def test_parse_errors_name_layer_and_line(text, index, line):
    with pytest.raises(SpecError) as info:
        parse_spec(text)
    assert info.value.index == index and info.value.line == line
    assert f"layer {index}" in str(info.value)


def test_bad_directive_names_line():
    with pytest.raises(SpecError) as info:
        parse_spec("input c=3 h=x w=4\n")
    assert info.value.line == 1


def test_validate_fc_before_flatten_names_index():
    spec = NetworkSpec((L("conv", out=4), L("relu"), L("fc", out=10)), (3, 8, 8))
    with pytest.raises(SpecError, match="layer 2") as info:
        validate(spec)
    assert info.value.index == 2


def test_validate_class_count_mismatch():
    spec = NetworkSpec((L("conv", out=4), L("flatten"), L("fc", out=3)), (3, 4, 4), num_classes=10)
    with pytest.raises(SpecError) as info:
        validate(spec)
    assert info.value.index == 2


def test_validate_kernel_too_large():
    spec = NetworkSpec((L("conv", out=4, k=5, pad=0),), (3, 3, 3))
    with pytest.raises(SpecError) as info:
        validate(spec)
    assert info.value.index == 0


def test_validate_ghost_ratio_too_large():
    spec = NetworkSpec((L("ghost", out=4, s=5),), (3, 4, 4))
    with pytest.raises(SpecError, match="layer 0"):
        validate(spec)


def test_spec_is_immutable():
    spec = build_tiny()
    with pytest.raises(Exception):
        spec.layers = ()
    assert isinstance(spec.layers, tuple)
    assert np.all([isinstance(l, LayerSpec) for l in spec.layers])
