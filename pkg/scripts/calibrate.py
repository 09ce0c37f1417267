"""Energy-slack constant c_E from the linear heat reduction, and the heat-kernel error."""
import math

from stefan_spde.config import parse_text
from stefan_spde.simulation import prepare, simulate
from stefan_spde.verification import calibrate_energy_constant, tol_disc


def main():
    c_E = calibrate_energy_constant()
    print(f"c_E = {c_E:.6g}")
    setup = prepare(parse_text("preset = heat2d-exact").config)
    tr = simulate(setup)
    exact = math.exp(-2 * math.pi ** 2 * setup.config.T)
    print(f"heat reduction: final (1,1) coefficient {tr.final_state[0]:.10f}, exact {exact:.10f}, "
          f"rel. error {abs(tr.final_state[0] - exact) / exact:.2e}")
    noisy = prepare(parse_text("").config)
    print(f"tol_disc at the default noisy configuration: {tol_disc(c_E, noisy):.4g} "
          f"(dt = {noisy.dt:.4g}, lambda_max = {noisy.basis.lam_max:.4g})")


if __name__ == "__main__":
    main()
