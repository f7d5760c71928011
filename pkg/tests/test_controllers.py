import numpy as np
import pytest

from teleosim.controllers import (
    FP,
    PP,
    FourC,
    ImpedanceGains,
    OperatorModel,
    default_follower_gains,
    four_channel_torques,
    fp_leader_torque,
    impedance_torque,
    operator_torque,
    pp_leader_torque,
    scheme_from_dict,
    scheme_to_dict,
)


def test_impedance_torque_values():
    gains = ImpedanceGains(kp=np.array([100.0, 50.0]), kd=np.array([10.0, 5.0]))
    tau = impedance_torque(gains, q_ref=np.array([1.0, 0.0]), q=np.array([0.5, 0.5]), qdot=np.array([0.2, -0.4]))
    assert tau == pytest.approx([100 * 0.5 - 10 * 0.2, 50 * -0.5 - 5 * -0.4])


def test_impedance_gains_validation():
    with pytest.raises(ValueError, match="kp"):
        ImpedanceGains(kp=np.array([0.0]), kd=np.array([1.0]))
    with pytest.raises(ValueError, match="kd"):
        ImpedanceGains(kp=np.array([1.0]), kd=np.array([-1.0]))


def test_fp_leader_torque_sign_and_scale():
    tau = fp_leader_torque(0.5, np.array([2.0, -1.0, 0.0]))
    assert tau == pytest.approx([-1.0, 0.5, 0.0])
    # Exact silence on exact zeros.
    assert np.all(fp_leader_torque(0.3, np.zeros(4)) == 0.0)


def test_fp_requires_positive_gain():
    gains = default_follower_gains(2)
    with pytest.raises(ValueError, match="k_f"):
        FP(k_f=0.0, follower_gains=gains)
    with pytest.raises(ValueError, match="k_f"):
        FP(k_f=-0.5, follower_gains=gains)


def test_pp_leader_torque_pulls_toward_follower():
    gains = ImpedanceGains(kp=np.array([100.0]), kd=np.array([0.0]))
    tau = pp_leader_torque(gains, q_follower=np.array([0.0]), q_leader=np.array([0.2]), qdot_leader=np.zeros(1))
    assert tau == pytest.approx([-20.0])


def test_four_channel_pair():
    scheme = FourC(follower_gains=ImpedanceGains(kp=np.array([100.0]), kd=np.array([10.0])), force_gain=1.0)
    tau_l, tau_f = four_channel_torques(
        scheme,
        q_leader=np.array([0.1]),
        qdot_leader=np.array([0.0]),
        q_follower=np.array([0.0]),
        qdot_follower=np.array([0.0]),
        tau_operator=np.array([2.0]),
        tau_ext=np.array([3.0]),
    )
    assert tau_l == pytest.approx([100 * -0.1 - 3.0])
    assert tau_f == pytest.approx([100 * 0.1 + 2.0])


def test_operator_torque_tracks_and_saturates():
    model = OperatorModel(
        hand_kp=np.array([50.0]),
        hand_kd=np.array([5.0]),
        target_trajectory=lambda t: np.array([t]),
        tau_max=20.0,
    )
    tau = operator_torque(model, t=0.1, q_leader=np.array([0.0]), qdot_leader=np.array([0.0]))
    assert tau == pytest.approx([5.0])
    tau = operator_torque(model, t=10.0, q_leader=np.array([0.0]), qdot_leader=np.array([0.0]))
    assert tau == pytest.approx([20.0])  # clamped
    tau = operator_torque(model, t=-10.0, q_leader=np.array([0.0]), qdot_leader=np.array([0.0]))
    assert tau == pytest.approx([-20.0])


def test_default_follower_gains_shape():
    gains = default_follower_gains(7)
    assert gains.kp.shape == (7,) and np.all(gains.kp == 100.0)
    assert gains.kd.shape == (7,) and np.all(gains.kd == 10.0)


def test_scheme_json_round_trip():
    gains = default_follower_gains(2)
    schemes = [
        PP(leader_gains=ImpedanceGains(kp=np.array([30.0, 30.0]), kd=np.array([3.0, 3.0])), follower_gains=gains),
        FP(k_f=0.3, follower_gains=gains),
        FourC(follower_gains=gains, force_gain=0.8),
    ]
    for scheme in schemes:
        data = scheme_to_dict(scheme)
        back = scheme_from_dict(data)
        assert type(back) is type(scheme)
        assert scheme_to_dict(back) == data
    assert scheme_to_dict(schemes[1])["scheme"] == "FP"
    assert scheme_to_dict(schemes[1])["k_f"] == 0.3


def test_scheme_from_dict_rejects_unknown():
    with pytest.raises(ValueError, match="unknown scheme"):
        scheme_from_dict({"scheme": "XY"})
    with pytest.raises(ValueError, match="malformed"):
        scheme_from_dict({"scheme": "FP"})
