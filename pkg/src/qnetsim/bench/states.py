"""Reading quantum state out of node dumps, for verification.

Node state dumps carry amplitudes as "re,im" strings at 12 significant
digits. These helpers parse them back, resolve a virtual qubit across
dumps to the register actually holding it, and compare state vectors
up to an unobservable global phase.
"""

from __future__ import annotations

import numpy as np


def parse_amplitudes(register: dict) -> np.ndarray:
    out = np.empty(len(register["amplitudes"]), dtype=np.complex128)
    for i, pair in enumerate(register["amplitudes"]):
        re, im = pair.split(",")
        out[i] = complex(float(re), float(im))
    return out


def find_virtual_qubit(dump: dict, app_id: int, virt_id: int) -> dict:
    for vq in dump["virtual_qubits"]:
        if vq["virt_id"] == virt_id and vq["owner_app_id"] == app_id:
            return vq
    raise KeyError(f"app {app_id} qubit {virt_id} not in dump of {dump['node']}")


def locate_qubit(dumps: dict[str, dict], owner: str, app_id: int,
                 virt_id: int) -> tuple[np.ndarray, int, int]:
    """Resolve a virtual qubit to (amplitudes, position, num_qubits)."""
    vq = find_virtual_qubit(dumps[owner], app_id, virt_id)
    host_dump = dumps[vq["sim_host"]]
    sq = next(
        s for s in host_dump["simulated_qubits"] if s["sim_id"] == vq["sim_id"]
    )
    reg = next(
        r for r in host_dump["registers"]
        if r["register_id"] == sq["register_ref"]
    )
    return parse_amplitudes(reg), sq["position"], reg["num_qubits"]


def states_equal_up_to_global_phase(u: np.ndarray, v: np.ndarray,
                                    atol: float = 1e-9) -> bool:
    u = np.asarray(u, dtype=np.complex128).ravel()
    v = np.asarray(v, dtype=np.complex128).ravel()
    if u.shape != v.shape:
        return False
    k = int(np.argmax(np.abs(u)))
    if abs(v[k]) < atol:
        return False
    phase = u[k] / v[k]
    mag = abs(phase)
    if abs(mag - 1.0) > atol:
        return False
    return bool(np.allclose(u, v * phase, atol=atol, rtol=0.0))
