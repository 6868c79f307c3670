import itertools
import json

import numpy as np
import pytest

from threshold_rep.errors import DimensionError, InstanceTooLarge, ProtocolFormatError, ValidationError
from threshold_rep.protocol import (
    ProtocolSpec,
    ProverProgram,
    ThresholdTask,
    X,
    Y,
    compile_threshold,
    compile_winning_operator,
    load_protocol,
    program_spaces,
    protocol_from_dict,
    protocol_to_dict,
    random_program,
    random_protocol,
    restrict_to_subset,
    save_protocol,
    simulate,
    threshold_povm,
    validate_protocol,
)
from threshold_rep.quantum import (
    ChoiOperator,
    SpaceDims,
    choi_from_kraus,
    identity_choi,
    max_entangled,
    permute,
    proj,
    random_density,
    random_povm,
)
from threshold_rep.strategy import strategy_from_program


def pairing(q, s):
    return float(np.real(np.trace(q.q1 @ s.x)))


def classical_choi(f, d_x, d_y, p, w_dims=(), i=1):
    """Deterministic map x -> f(x) as a Choi operator on the program's spaces."""
    sin, sout = program_spaces(p, w_dims, i)
    kraus = []
    for x in range(d_x):
        k = np.zeros((d_y, d_x))
        k[f(x), x] = 1
        kraus.append(k)
    return choi_from_kraus(kraus, sin, sout)


# -- simulation versus the compiled operator ---------------------------------


@pytest.mark.parametrize("r", [1, 2])
def test_simulate_equals_winning_operator_pairing(r, rng):
    for _ in range(5):
        p = random_protocol(rng, r=r, dims=(2, 3))
        b = random_program(p, rng)
        q = compile_winning_operator(p)
        assert simulate(p, b) == pytest.approx(pairing(q, strategy_from_program(b, p)), abs=1e-12)


def test_identity_prover_on_hedging_protocol(hedging):
    b = ProverProgram.from_arrays(hedging, (), [identity_choi(SpaceDims.of((X(1), 2)), SpaceDims.of((Y(1), 2))).matrix])
    assert simulate(hedging, b) == pytest.approx(np.cos(np.pi / 8) ** 2, abs=1e-12)


def test_coin_brute_force_over_deterministic_provers(coin):
    vals = []
    for table in itertools.product(range(2), repeat=2):
        b = ProverProgram((), (classical_choi(lambda x: table[x], 2, 2, coin),))
        vals.append(simulate(coin, b))
    assert max(vals) == pytest.approx(0.5)
    assert min(vals) == pytest.approx(0.5)


def test_simulate_rejects_invalid_program(hedging, rng):
    sin, sout = program_spaces(hedging, (), 1)
    bad = ChoiOperator(0.3 * np.eye(4), sin, sout)
    with pytest.raises(ValidationError) as info:
        simulate(hedging, ProverProgram((), (bad,)))
    assert info.value.report is not None


def test_simulate_rejects_wrong_rounds(rng):
    p2 = random_protocol(rng, r=2)
    p1 = random_protocol(rng, r=1)
    with pytest.raises(DimensionError):
        simulate(p2, random_program(p1, rng))


def test_protocol_label_structure_is_checked(rng):
    rho = random_density(4, rng)
    p0, p1 = random_povm(4, rng)
    with pytest.raises(DimensionError):
        ProtocolSpec.from_arrays((2,), (2,), (2,), rho, [np.eye(16) / 4], p1, p0)
    with pytest.raises(DimensionError):
        ProtocolSpec.from_arrays((2,), (2,), (3,), rho, [], p1, p0)


def test_validate_protocol_reports_trace(rng):
    p0, p1 = random_povm(4, rng)
    p = ProtocolSpec.from_arrays((2,), (2,), (2,), 2 * random_density(4, rng), [], p1, p0)
    rep = validate_protocol(p)
    assert [c.name for c in rep.failures()] == ["rho.trace"]


# -- threshold compilation ---------------------------------------------------


def test_threshold_povm_completeness_and_edges(rng):
    p0, p1 = random_povm(2, rng)
    for n in (1, 2, 3):
        for k in range(n + 1):
            rej, acc = threshold_povm(p0, p1, n, k)
            assert np.allclose(rej + acc, np.eye(2**n))
        rej, acc = threshold_povm(p0, p1, n, 0)
        assert np.allclose(acc, np.eye(2**n))
        _, acc = threshold_povm(p0, p1, n, n)
        want = p1
        for _ in range(n - 1):
            want = np.kron(want, p1)
        assert np.allclose(acc, want)


def test_threshold_povm_monotone_in_k(rng):
    p0, p1 = random_povm(2, rng)
    n = 3
    accs = [threshold_povm(p0, p1, n, k)[1] for k in range(n + 1)]
    for a, b in zip(accs, accs[1:]):
        assert np.linalg.eigvalsh(a - b)[0] >= -1e-12


def test_threshold_povm_permutation_symmetric(rng):
    p0, p1 = random_povm(2, rng)
    _, acc = threshold_povm(p0, p1, 3, 2)
    s = SpaceDims.of(("1", 2), ("2", 2), ("3", 2))
    for order in itertools.permutations(["1", "2", "3"]):
        assert np.allclose(permute(acc, s, order), acc)


def test_single_instance_task_is_base(hedging):
    base, q = compile_threshold(ThresholdTask(hedging, 1, 1))
    assert base is hedging
    assert np.allclose(q.q1, compile_winning_operator(hedging).q1)


def test_product_prover_wins_all_with_product_probability(rng):
    p = random_protocol(rng, r=1)
    b = random_program(p, rng)
    v = simulate(p, b)
    compound, q = compile_threshold(ThresholdTask(p, 2, 2))
    # prover runs b on each copy; grouped factor ordering is X#1 X#2
    phi = b.phi[0]
    names = phi.in_spaces.names + phi.out_spaces.names
    copies = SpaceDims(tuple((f"{nm}#{j}", d) for j in (1, 2) for nm, d in phi.in_spaces + phi.out_spaces))
    m = permute(np.kron(phi.matrix, phi.matrix), copies, [f"{nm}#{j}" for nm in names for j in (1, 2)])
    both = ProverProgram.from_arrays(compound, (), [m])
    assert simulate(compound, both) == pytest.approx(v * v, abs=1e-12)


def test_compiled_threshold_protocol_validates(rng):
    p = random_protocol(rng, r=2)
    compound, q = compile_threshold(ThresholdTask(p, 2, 1))
    assert validate_protocol(compound).passed
    assert q.x_dims == tuple(d**2 for d in p.x_dims)


def test_threshold_cap():
    p = random_protocol(np.random.default_rng(0))
    with pytest.raises(InstanceTooLarge):
        compile_threshold(ThresholdTask(p, 13, 1))
    with pytest.raises(InstanceTooLarge):
        compile_threshold(ThresholdTask(p, 7, 1))


def test_threshold_task_domain(hedging):
    with pytest.raises(ValueError):
        ThresholdTask(hedging, 0, 0)
    with pytest.raises(ValueError):
        ThresholdTask(hedging, 2, 3)


def test_restrict_to_subset(hedging):
    t = ThresholdTask(hedging, 4, 2)
    sub = restrict_to_subset(t, [1, 3])
    assert (sub.n, sub.k) == (2, 2)
    with pytest.raises(ValueError):
        restrict_to_subset(t, [])
    with pytest.raises(ValueError):
        restrict_to_subset(t, [5])


# -- protocol files ----------------------------------------------------------


def test_protocol_roundtrip(tmp_path, rng):
    p = random_protocol(rng, r=2, dims=(2, 3))
    path = tmp_path / "p.json"
    save_protocol(p, path)
    q = load_protocol(path)
    assert q.x_dims == p.x_dims and q.z_dims == p.z_dims
    assert np.array_equal(q.rho.matrix, p.rho.matrix)
    assert np.array_equal(q.psi[0].matrix, p.psi[0].matrix)
    assert np.array_equal(q.povm.p1, p.povm.p1)


def test_protocol_file_errors(tmp_path, hedging):
    d = protocol_to_dict(hedging)
    with pytest.raises(ProtocolFormatError):
        protocol_from_dict({**d, "extra": 1})
    missing = dict(d)
    del missing["p1"]
    with pytest.raises(ProtocolFormatError):
        protocol_from_dict(missing)
    with pytest.raises(ProtocolFormatError):
        protocol_from_dict({**d, "version": 2})
    with pytest.raises(ProtocolFormatError):
        protocol_from_dict({**d, "x_dims": [3]})
    path = tmp_path / "t.json"
    path.write_text(json.dumps(d)[:80])
    with pytest.raises(ProtocolFormatError):
        load_protocol(path)


def test_hedging_state_is_maximally_entangled(hedging):
    assert np.allclose(hedging.rho.matrix, proj(max_entangled(2)))
