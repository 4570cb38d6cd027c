import math

import pytest
import torch

from depthsr.distill import (
    DEFAULT_GAMMA,
    Role,
    RoleAssignment,
    affinity,
    affinity_logits,
    affinity_space_loss,
    distill_loss,
    forced_roles,
    mean_abs_error,
    order_stacks,
    output_space_loss,
    select_roles,
)
from depthsr.errors import DivergenceError, ShapeError
from depthsr.networks import DENet, DSRNet
from .gradients import away_from_kink, relative_gradient_error


def brute_force_affinity(feature: torch.Tensor) -> torch.Tensor:
    c, h, w = feature.shape
    r = feature.reshape(c, h * w).T.tolist()
    n = h * w
    out = torch.zeros(n, n, dtype=torch.float64)
    for i in range(n):
        logits = [sum(a * b for a, b in zip(r[i], r[j])) for j in range(n)]
        top = max(logits)
        exps = [math.exp(v - top) for v in logits]
        total = sum(exps)
        for j in range(n):
            out[i, j] = exps[j] / total
    return out


def test_mean_abs_error():
    gt = torch.rand(1, 1, 4, 4)
    assert float(mean_abs_error(gt, gt)) == 0.0
    assert float(mean_abs_error(gt + 0.25, gt)) == pytest.approx(0.25)
    pred = torch.tensor([[1.0, 2.0], [3.0, 4.0]])
    assert float(mean_abs_error(pred, torch.tensor([[1.0, 2.0], [3.0, 5.0]]))) == 0.25
    with pytest.raises(ShapeError):
        mean_abs_error(torch.zeros(2, 2), torch.zeros(2, 3))


def test_select_roles():
    assert select_roles(0.1, 0.2).teacher == Role.DSR
    assert select_roles(0.1, 0.2).student == Role.DE
    assert select_roles(0.3, 0.2).teacher == Role.DE
    assert select_roles(0.3, 0.2).student == Role.DSR
    assert select_roles(0.2, 0.2).teacher == Role.DSR


def test_select_roles_rejects_bad_errors():
    with pytest.raises(DivergenceError):
        select_roles(math.nan, 0.1)
    with pytest.raises(ValueError):
        select_roles(-0.1, 0.1)
    with pytest.raises(ValueError):
        select_roles(0.1, math.inf)


def test_role_assignment_record():
    roles = forced_roles(Role.DSR, 0.1, 0.3)
    assert roles.teacher == Role.DE
    assert roles.forced
    assert RoleAssignment.from_record(roles.to_record()) == roles
    assert roles.teacher != roles.student


def test_affinity_constant_feature_is_uniform():
    a = affinity(torch.full((3, 8, 8), 0.7), pool_size=4)
    assert a.shape == (1, 16, 16)
    assert torch.allclose(a, torch.full_like(a, 1 / 16))


def test_affinity_rows_sum_to_one():
    torch.manual_seed(0)
    for _ in range(5):
        a = affinity(torch.randn(2, 4, 12, 12), pool_size=6)
        assert torch.allclose(a.sum(dim=-1), torch.ones(2, 36), atol=1e-5)
        assert (a > 0).all() and (a < 1).all()


def test_affinity_logits_symmetric():
    torch.manual_seed(1)
    logits = affinity_logits(torch.randn(1, 5, 8, 8, dtype=torch.float64), pool_size=4)
    assert torch.allclose(logits, logits.transpose(1, 2), atol=1e-6)


def test_affinity_brute_force():
    feature = torch.tensor([[[1.0, 0.0], [0.0, 0.0]]], dtype=torch.float64)
    expected = brute_force_affinity(feature)
    assert torch.allclose(affinity(feature, pool_size=2)[0], expected, atol=1e-6)
    assert expected[0, 0] == pytest.approx(math.e / (math.e + 3))
    assert torch.allclose(expected[1], torch.full((4,), 0.25, dtype=torch.float64))

    torch.manual_seed(2)
    random = torch.rand(3, 4, 4, dtype=torch.float64)
    assert torch.allclose(affinity(random, pool_size=None)[0], brute_force_affinity(random), atol=1e-6)


def test_affinity_permutation():
    torch.manual_seed(3)
    feature = torch.randn(4, 3, 5, dtype=torch.float64)
    perm = torch.randperm(15)
    permuted = feature.reshape(4, 15)[:, perm].reshape(4, 3, 5)
    a = affinity(feature, pool_size=None)[0]
    assert torch.allclose(affinity(permuted, pool_size=None)[0], a[perm][:, perm], atol=1e-10)


def test_affinity_pool_too_large():
    with pytest.raises(ShapeError):
        affinity(torch.rand(1, 2, 8, 8), pool_size=16)


def test_output_space_loss():
    x = [torch.rand(1, 1, 4, 4) for _ in range(3)]
    assert float(output_space_loss(x, x)) == 0.0
    base = torch.zeros(1, 1, 4, 4)
    assert float(output_space_loss([base + 0.5], [base])) == pytest.approx(0.5)
    value = output_space_loss([base + 0.2, base + 0.4], [base, base])
    assert float(value) == pytest.approx(0.3)
    with pytest.raises(ShapeError):
        output_space_loss([base, base], [base])


def test_affinity_space_loss():
    torch.manual_seed(4)
    x = [torch.rand(1, 4, 8, 8) for _ in range(2)]
    assert float(affinity_space_loss(x, x, pool_size=4)) == 0.0
    constants = affinity_space_loss([torch.full((1, 4, 8, 8), 0.2)], [torch.full((1, 4, 8, 8), 0.9)], pool_size=4)
    assert float(constants) == pytest.approx(0.0, abs=1e-7)

    a = torch.rand(1, 1, 2, 2, dtype=torch.float64)
    b = torch.rand(1, 1, 2, 2, dtype=torch.float64)
    expected = (brute_force_affinity(a[0]) - brute_force_affinity(b[0])).abs().mean()
    assert float(affinity_space_loss([a], [b], pool_size=2)) == pytest.approx(float(expected), abs=1e-9)
    assert float(affinity_space_loss([a], [b], pool_size=2)) > 0
    with pytest.raises(ShapeError):
        affinity_space_loss([a], [torch.rand(1, 2, 2, 2, dtype=torch.float64)], pool_size=2)


def test_distill_loss():
    assert float(distill_loss(torch.tensor(0.2), torch.tensor(0.4), 0.5)) == pytest.approx(0.4)
    l_o = torch.tensor(0.37)
    assert torch.equal(distill_loss(l_o, torch.tensor(0.9), 0.0), l_o)
    assert DEFAULT_GAMMA == 0.5


def test_output_space_gradient():
    torch.manual_seed(5)
    target = torch.rand(1, 1, 8, 8, dtype=torch.float64)
    x = away_from_kink(target)
    assert relative_gradient_error(lambda t: output_space_loss([t, t * 0.5], [target, target * 0.5]), x) <= 1e-4


def test_affinity_space_gradient():
    torch.manual_seed(6)
    teacher = [torch.rand(1, 3, 8, 8, dtype=torch.float64) * 3]
    x = torch.rand(1, 3, 8, 8, dtype=torch.float64)
    assert relative_gradient_error(lambda t: affinity_space_loss([t], teacher, pool_size=4), x) <= 1e-4

    small_teacher = [torch.rand(1, 3, 4, 4, dtype=torch.float64) * 3]
    small = torch.rand(1, 3, 4, 4, dtype=torch.float64)
    assert relative_gradient_error(lambda t: affinity_space_loss([t], small_teacher, pool_size=None), small) <= 1e-4


def test_distill_gradient_skips_teacher():
    torch.manual_seed(7)
    student = DSRNet(scale=2, stage_count=2, channels=4).double()
    teacher = DENet(stage_count=2, channels=4).double()
    roles = select_roles(0.3, 0.1)
    assert roles.student == Role.DSR

    sr, de = order_stacks(
        roles,
        student(torch.rand(1, 1, 8, 8, dtype=torch.float64)),
        teacher(torch.rand(1, 3, 16, 16, dtype=torch.float64)),
    )
    loss = distill_loss(output_space_loss(sr.side_outputs, de.side_outputs), affinity_space_loss(sr.features, de.features, 8))
    loss.backward()
    assert all(p.grad is None or not p.grad.any() for p in teacher.parameters())
    assert any(p.grad is not None and p.grad.any() for p in student.parameters())
