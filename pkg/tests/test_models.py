"""Architecture tests: layer census, shape contracts, block semantics, and
parameter counts against an independent layer-table summation."""

import numpy as np
import pytest

from microcompat import models as M
from microcompat import tensor as T
from microcompat.errors import ConfigError
from microcompat.nn import BatchNorm2d, Conv2d, Linear


# --- independent layer-table oracle ---------------------------------------
# These duplicate the channel schedules on purpose: a spreadsheet-style
# summation written from the architecture descriptions, not from models.py.

def s(c, wm):
    return max(1, int(c * wm + 0.5))


def vgg16_table(wm=1.0, classes=2, in_ch=3):
    total = 0
    prev = in_ch
    for base, count in [(64, 2), (128, 2), (256, 3), (512, 3), (512, 3)]:
        for _ in range(count):
            out = s(base, wm)
            total += out * prev * 9 + out
            prev = out
    fc = s(4096, wm)
    total += fc * (prev * 49) + fc
    total += fc * fc + fc
    total += classes * fc + classes
    return total


def resnet18_table(wm=1.0, classes=2, in_ch=3):
    total = 0
    c64 = s(64, wm)
    total += c64 * in_ch * 49          # stem conv, no bias
    total += 2 * c64                   # stem BN gamma+beta
    prev = c64
    for i, base in enumerate([64, 128, 256, 512]):
        out = s(base, wm)
        for b in range(2):
            cin = prev if b == 0 else out
            total += out * cin * 9 + 2 * out      # conv1 + bn1
            total += out * out * 9 + 2 * out      # conv2 + bn2
            if b == 0 and (i > 0 or cin != out):  # projection shortcut
                total += out * cin * 1 + 2 * out
        prev = out
    total += classes * prev + classes
    return total


def densenet121_table(wm=1.0, classes=2, in_ch=3):
    total = 0
    growth = s(32, wm)
    ch = s(64, wm)
    total += ch * in_ch * 49 + 2 * ch  # stem conv + BN
    for i, layers in enumerate([6, 12, 24, 16]):
        for j in range(layers):
            cin = ch + j * growth
            mid = 4 * growth
            total += 2 * cin                 # bn1
            total += mid * cin               # 1x1 conv
            total += 2 * mid                 # bn2
            total += growth * mid * 9        # 3x3 conv
        ch = ch + layers * growth
        if i < 3:
            out = max(1, ch // 2)
            total += 2 * ch + out * ch       # transition BN + 1x1
            ch = out
    total += 2 * ch                          # final BN
    total += classes * ch + classes
    return total


def build(family, wm=1.0, classes=2, seed=0):
    return M.build_model(M.ModelSpec(family, num_classes=classes, width_multiplier=wm), seed)


class TestSpecValidation:
    def test_unknown_family(self):
        with pytest.raises(ConfigError):
            M.ModelSpec("alexnet").validate()

    def test_bad_width(self):
        with pytest.raises(ConfigError):
            M.ModelSpec("vgg16", width_multiplier=0.0).validate()
        with pytest.raises(ConfigError):
            M.ModelSpec("vgg16", width_multiplier=1.5).validate()

    def test_bad_classes(self):
        with pytest.raises(ConfigError):
            M.ModelSpec("vgg16", num_classes=1).validate()

    def test_builder_family_guard(self):
        with pytest.raises(ConfigError):
            M.build_vgg16(M.ModelSpec("resnet18"))


class TestVGG16:
    def test_layer_census_13_conv_3_fc(self):
        model = build("vgg16", wm=0.125)
        census = M.layer_census(model)
        assert census == {"conv": 13, "fc": 3}

    def test_forward_shape_256(self):
        model = build("vgg16", wm=0.25).eval()
        out = model(T.Tensor(np.zeros((1, 3, 256, 256), np.float32)))
        assert out.shape == (1, 2)

    def test_forward_shape_64(self):
        model = build("vgg16", wm=0.125).eval()
        out = model(T.Tensor(np.zeros((2, 3, 64, 64), np.float32)))
        assert out.shape == (2, 2)

    @pytest.mark.parametrize("wm", [1.0, 0.25, 0.125])
    def test_param_count_matches_table(self, wm):
        assert M.count_params(build("vgg16", wm=wm)) == vgg16_table(wm)

    def test_full_width_reference_count(self):
        # canonical 138,357,544 at 1000 classes -> swap head for 2 classes
        assert vgg16_table(1.0, classes=1000) == 138_357_544
        assert vgg16_table(1.0, classes=2) == 134_268_738


class TestResNet18:
    def test_forward_shape_256(self):
        model = build("resnet18", wm=0.25).eval()
        out = model(T.Tensor(np.zeros((1, 3, 256, 256), np.float32)))
        assert out.shape == (1, 2)

    def test_forward_shape_64(self):
        model = build("resnet18", wm=0.125).eval()
        assert model(T.Tensor(np.zeros((1, 3, 64, 64), np.float32))).shape == (1, 2)

    def test_projection_present_iff_shape_changes(self):
        model = build("resnet18", wm=0.25)
        blocks = [m for m in model.modules() if isinstance(m, M.BasicBlock)]
        assert len(blocks) == 8
        for blk in blocks:
            changes = blk.stride != 1 or blk.conv1.in_channels != blk.conv1.out_channels
            assert blk.has_projection == changes
        assert [b.has_projection for b in blocks] == [False, False, True, False, True, False, True, False]

    def test_zeroed_residual_branch_equals_shortcut_path(self):
        model = build("resnet18", wm=0.125, seed=3).eval()
        for mod in model.modules():
            if isinstance(mod, M.BasicBlock):
                for p in (mod.conv1.weight, mod.conv2.weight, mod.bn1.gamma,
                          mod.bn2.gamma, mod.bn1.beta, mod.bn2.beta):
                    p.data[...] = 0.0
        x = T.Tensor(np.random.default_rng(0).random((1, 3, 64, 64)).astype(np.float32))
        with T.no_grad():
            got = model(x)
            # replay the network using only shortcut paths
            h = model.maxpool(T.relu(model.bn1(model.conv1(x))))
            for i in range(1, 5):
                for blk in getattr(model, f"layer{i}"):
                    h = T.relu(blk.shortcut(h))
            want = model.fc(model.flatten(model.avgpool(h)))
        assert np.allclose(got.data, want.data, atol=1e-6)

    @pytest.mark.parametrize("wm", [1.0, 0.25, 0.125])
    def test_param_count_matches_table(self, wm):
        assert M.count_params(build("resnet18", wm=wm)) == resnet18_table(wm)

    def test_full_width_reference_count(self):
        # canonical 11,689,512 at 1000 classes -> swap head for 2 classes
        assert resnet18_table(1.0, classes=1000) == 11_689_512
        assert resnet18_table(1.0, classes=2) == 11_177_538


class TestDenseNet121:
    def test_forward_shape_256(self):
        model = build("densenet121", wm=0.125).eval()
        out = model(T.Tensor(np.zeros((1, 3, 256, 256), np.float32)))
        assert out.shape == (1, 2)

    def test_block_channel_arithmetic(self):
        model = build("densenet121", wm=1.0)
        assert model.block1.out_channels == 64 + 6 * 32 == 256
        assert model.transition1.out_channels == 128
        assert model.block4.out_channels == 1024
        assert model.classifier.in_features == 1024

    def test_dense_connectivity_counts(self):
        model = build("densenet121", wm=0.125, seed=1).eval()
        with T.no_grad():
            model(T.Tensor(np.zeros((1, 3, 64, 64), np.float32)))
        for i, layers in enumerate([6, 12, 24, 16], start=1):
            block = getattr(model, f"block{i}")
            # j-th layer receives exactly j concatenated inputs
            assert block.last_input_arities == list(range(1, layers + 1))
            assert sum(block.last_input_arities) == layers * (layers + 1) // 2
            assert block.connection_count() == layers * (layers + 1) // 2

    @pytest.mark.parametrize("wm", [1.0, 0.25, 0.125])
    def test_param_count_matches_table(self, wm):
        assert M.count_params(build("densenet121", wm=wm)) == densenet121_table(wm)

    def test_full_width_reference_count(self):
        assert densenet121_table(1.0, classes=1000) == 7_978_856
        assert densenet121_table(1.0, classes=2) == 6_955_906

    def test_fewer_params_than_resnet18(self):
        assert densenet121_table(1.0) < resnet18_table(1.0)
        assert M.count_params(build("densenet121", wm=1.0)) < M.count_params(build("resnet18", wm=1.0))


class TestReplaceHead:
    def test_vgg_1000_to_2_delta(self):
        model = build("vgg16", wm=1.0, classes=1000)
        before = M.count_params(model)
        M.replace_head(model, 2)
        after = M.count_params(model)
        assert before - after == (4096 * 1000 + 1000) - (4096 * 2 + 2)

    def test_same_width_count_unchanged(self):
        model = build("resnet18", wm=0.25, classes=2)
        before = M.count_params(model)
        M.replace_head(model, 2, seed=99)
        assert M.count_params(model) == before

    def test_non_head_params_bitwise_untouched(self):
        model = build("resnet18", wm=0.125, classes=4)
        head = set(M.head_parameter_names(model))
        snapshot = {n: p.data.copy() for n, p in model.named_parameters() if n not in head}
        M.replace_head(model, 2, seed=5)
        for n, p in model.named_parameters():
            if n in snapshot:
                assert np.array_equal(p.data, snapshot[n]), n

    def test_spec_updated(self):
        model = build("vgg16", wm=0.125, classes=2)
        M.replace_head(model, 3)
        assert model.spec.num_classes == 3
        out = model.eval()(T.Tensor(np.zeros((1, 3, 64, 64), np.float32)))
        assert out.shape == (1, 3)


class TestTrainablePolicy:
    def test_head_only_marks_exactly_the_head(self):
        model = build("densenet121", wm=0.125)
        M.set_trainable(model, "head_only")
        trainable = [n for n, p in model.named_parameters() if p.trainable]
        assert sorted(trainable) == sorted(M.head_parameter_names(model))
        assert sorted(trainable) == ["classifier.bias", "classifier.weight"]

    def test_all_marks_everything(self):
        model = build("vgg16", wm=0.125)
        M.set_trainable(model, "head_only")
        M.set_trainable(model, "all")
        assert all(p.trainable for p in model.parameters())

    def test_bad_policy(self):
        with pytest.raises(ConfigError):
            M.set_trainable(build("vgg16", wm=0.125), "none")


class TestDeterminism:
    def test_same_seed_same_init(self):
        a = build("resnet18", wm=0.125, seed=7)
        b = build("resnet18", wm=0.125, seed=7)
        for (na, pa), (nb, pb) in zip(a.named_parameters(), b.named_parameters()):
            assert na == nb
            assert np.array_equal(pa.data, pb.data)

    def test_different_seed_differs(self):
        a = build("vgg16", wm=0.125, seed=0)
        b = build("vgg16", wm=0.125, seed=1)
        assert not np.array_equal(a.features[0].weight.data, b.features[0].weight.data)

    def test_parameter_names_unique(self):
        for fam in M.FAMILIES:
            names = [n for n, _ in build(fam, wm=0.125).named_parameters()]
            assert len(names) == len(set(names))


class TestInitScheme:
    def test_bias_zero_bn_identity(self):
        model = build("resnet18", wm=0.25)
        for mod in model.modules():
            if isinstance(mod, BatchNorm2d):
                assert np.all(mod.gamma.data == 1.0) and np.all(mod.beta.data == 0.0)
                assert np.all(mod.running_mean == 0.0) and np.all(mod.running_var == 1.0)
            if isinstance(mod, (Conv2d, Linear)) and mod.bias is not None:
                assert np.all(mod.bias.data == 0.0)

    def test_kaiming_bound(self):
        model = build("vgg16", wm=0.25, seed=2)
        conv = model.features[0]
        bound = np.sqrt(6.0 / (3 * 9))
        w = conv.weight.data
        assert w.max() <= bound and w.min() >= -bound
        assert w.std() > bound / 4  # actually spread out, not degenerate
