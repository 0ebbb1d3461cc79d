"""Network construction, forward composition, freezing, checkpoints."""

import numpy as np
import pytest

from kdlab.autograd import Tensor, backward, tensor_sum
from kdlab.config import ArchParams, parse_config
from kdlab.models import (Adaptor, Affine, BatchNorm, CHECKPOINT_MAGIC,
                          Classifier, FeatureExtractor, Network, build_pair,
                          load_checkpoint, make_network, parameter_count,
                          save_checkpoint)


def _manual_forward(net, x):
    """Replay the extractor and classifier in plain numpy, eval mode."""
    h = x
    for layer in net.extractor.layers[:-1]:
        h = np.maximum(h @ layer.weight.values + layer.bias.values, 0.0)
    last = net.extractor.layers[-1]
    h = h @ last.weight.values + last.bias.values
    bn = net.extractor.norm
    if bn is not None:
        h = (h - bn.running_mean) / np.sqrt(bn.running_var + bn.eps)
        h = h * bn.gamma.values + bn.beta.values
    feats = np.maximum(h, 0.0)
    return feats, feats @ net.classifier.weight.values


def test_forward_matches_manual_composition():
    rng = np.random.default_rng(3)
    tol = 1e-12
    for feature_norm in (False, True):
        arch = ArchParams(hidden=(7, 5), feature_dim=4,
                          feature_norm=feature_norm)
        net = make_network(6, arch, classes=3, seed=11)
        x = rng.standard_normal((9, 6))
        feats, logits = net.forward(x)
        ref_f, ref_z = _manual_forward(net, x)
        assert np.max(np.abs(feats.values - ref_f)) < tol
        assert np.max(np.abs(logits.values - ref_z)) < tol
        assert np.min(feats.values) >= 0.0


def test_classifier_is_bias_free():
    clf = Classifier(4, 3, np.random.default_rng(0))
    assert len(clf.parameters()) == 1
    z = clf(Tensor(np.zeros((2, 4)))).values
    assert np.max(np.abs(z)) == 0.0


def test_batchnorm_train_mode_normalizes_batch():
    rng = np.random.default_rng(5)
    bn = BatchNorm(6)
    x = rng.standard_normal((64, 6)) * 3.0 + 2.0
    out = bn(Tensor(x), train=True).values
    assert np.max(np.abs(out.mean(axis=0))) < 1e-10
    assert np.max(np.abs(out.std(axis=0) - 1.0)) < 1e-3


def test_batchnorm_running_stats_follow_momentum_recurrence():
    """Two training batches; replay the momentum-0.9 buffer updates."""
    rng = np.random.default_rng(7)
    bn = BatchNorm(3)
    mean_ref = np.zeros(3)
    var_ref = np.ones(3)
    for _ in range(2):
        x = rng.standard_normal((32, 3)) * 1.7 - 0.4
        bn(Tensor(x), train=True)
        mean_ref = 0.9 * mean_ref + 0.1 * x.mean(axis=0)
        var_ref = 0.9 * var_ref + 0.1 * x.var(axis=0)
    assert np.max(np.abs(bn.running_mean - mean_ref)) < 1e-12
    assert np.max(np.abs(bn.running_var - var_ref)) < 1e-12
    # eval mode consumes the buffers as constants
    x = rng.standard_normal((5, 3))
    out = bn(Tensor(x), train=False).values
    ref = (x - mean_ref) / np.sqrt(var_ref + bn.eps)
    assert np.max(np.abs(out - ref)) < 1e-12


def test_affine_init_depends_only_on_rng_stream():
    a = Affine(4, 3, np.random.default_rng(9))
    b = Affine(4, 3, np.random.default_rng(9))
    assert np.array_equal(a.weight.values, b.weight.values)
    assert np.array_equal(a.bias.values, b.bias.values)


# checkpoints
# -----------

def test_checkpoint_roundtrip_is_bit_exact(tmp_path):
    arch = ArchParams(hidden=(10, 6), feature_dim=5, feature_norm=True)
    net = make_network(8, arch, classes=4, seed=21)
    net.forward(np.random.default_rng(0).standard_normal((16, 8)), train=True)
    state = net.state_arrays()
    path = tmp_path / "net.ckpt"
    save_checkpoint(str(path), state)
    loaded = load_checkpoint(str(path))
    assert sorted(loaded) == sorted(state)
    for name in state:
        assert np.array_equal(loaded[name], state[name]), name
    with open(path, "rb") as fh:
        assert fh.readline().decode().strip() == CHECKPOINT_MAGIC


def test_checkpoint_rejects_foreign_header(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"some-other-format 9\ndata\n")
    with pytest.raises(ValueError):
        load_checkpoint(str(path))


def test_load_state_restores_forward_exactly(tmp_path):
    arch = ArchParams(hidden=(6,), feature_dim=4, feature_norm=True)
    src = make_network(5, arch, classes=3, seed=1)
    rng = np.random.default_rng(2)
    src.forward(rng.standard_normal((12, 5)), train=True)
    path = tmp_path / "src.ckpt"
    save_checkpoint(str(path), src.state_arrays())

    dst = make_network(5, arch, classes=3, seed=999)
    dst.load_state(load_checkpoint(str(path)))
    x = rng.standard_normal((7, 5))
    _, za = src.forward(x)
    _, zb = dst.forward(x)
    assert np.array_equal(za.values, zb.values)


# freezing
# --------

def test_frozen_network_is_constant_and_gradient_free():
    arch = ArchParams(hidden=(8,), feature_dim=4, feature_norm=True)
    net = make_network(6, arch, classes=3, seed=13)
    rng = np.random.default_rng(4)
    net.forward(rng.standard_normal((10, 6)), train=True)
    net.set_frozen(True)

    for p in net.parameters():
        assert not p.requires_grad
        assert p.grad is None

    x = rng.standard_normal((5, 6))
    mean_before = net.extractor.norm.running_mean.copy()
    feats, logits = net.forward(x, train=True)
    # train=True must not touch buffers or build a graph on a frozen net
    assert np.array_equal(net.extractor.norm.running_mean, mean_before)
    assert not logits.requires_grad
    _, again = net.forward(x, train=True)
    assert np.array_equal(logits.values, again.values)


def test_unfrozen_network_backpropagates():
    arch = ArchParams(hidden=(8,), feature_dim=4, feature_norm=False)
    net = make_network(6, arch, classes=3, seed=17)
    _, logits = net.forward(np.random.default_rng(5).standard_normal((4, 6)),
                            train=True)
    backward(tensor_sum(logits))
    grads = [np.max(np.abs(p.grad)) for p in net.parameters()]
    assert max(grads) > 0.0


# pairing
# -------

def _pair_cfg(student_hidden):
    return parse_config(f"""
[dataset]
input_dim = 8
classes = 4
[teacher]
hidden = 32,32
feature_dim = 16
[student]
hidden = {student_hidden}
feature_dim = 4
""")


def test_build_pair_teacher_ignores_student_architecture():
    """Same seed, different student width: the teacher must not move."""
    t1, s1, _ = build_pair(_pair_cfg("8,8"), seed=3)
    t2, s2, _ = build_pair(_pair_cfg("12,12"), seed=3)
    a = t1.state_arrays()
    b = t2.state_arrays()
    for name in a:
        assert np.array_equal(a[name], b[name]), name
    assert s1.extractor.layers[0].weight.values.shape != \
        s2.extractor.layers[0].weight.values.shape


def test_build_pair_seed_changes_everything():
    t1, s1, a1 = build_pair(_pair_cfg("8,8"), seed=0)
    t2, s2, a2 = build_pair(_pair_cfg("8,8"), seed=1)
    assert not np.array_equal(t1.classifier.weight.values,
                              t2.classifier.weight.values)
    assert not np.array_equal(s1.classifier.weight.values,
                              s2.classifier.weight.values)
    assert not np.array_equal(a1.affine.weight.values,
                              a2.affine.weight.values)


def test_build_pair_rejects_student_above_teacher():
    import dataclasses

    from kdlab.config import ArchParams as Arch, ConfigError
    with pytest.raises(ConfigError):
        parse_config("""
[dataset]
input_dim = 8
classes = 4
[teacher]
hidden = 8
feature_dim = 4
[student]
hidden = 64,64
feature_dim = 32
""")
    # the builder re-checks, for configs assembled without the parser
    cfg = dataclasses.replace(
        _pair_cfg("8,8"),
        student=Arch(hidden=(64, 64), feature_dim=32, feature_norm=True))
    with pytest.raises(ValueError):
        build_pair(cfg, seed=0)


def test_parameter_count_matches_hand_count():
    arch = ArchParams(hidden=(5, 3), feature_dim=2, feature_norm=True)
    net = make_network(4, arch, classes=6, seed=0)
    # affines: (4*5+5) + (5*3+3) + (3*2+2), feature bn: 2+2, classifier: 2*6
    assert parameter_count(net) == 25 + 18 + 8 + 4 + 12


def test_adaptor_output_lives_in_nonnegative_range():
    rng = np.random.default_rng(23)
    adaptor = Adaptor(4, 16, rng)
    out = adaptor(Tensor(rng.standard_normal((10, 4))), train=True)
    assert np.min(out.values) >= 0.0
    plain = Adaptor(4, 16, np.random.default_rng(23), normalize=False)
    assert len(plain.parameters()) == 2
    assert len(adaptor.parameters()) == 4
