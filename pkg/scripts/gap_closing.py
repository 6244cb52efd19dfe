"""Follow the support of mu^t for a two-cut measure as t grows through the critical time.

Prints the support components at each t, then the local law at the critical
point (cusp) and just after it (quadratic minimum).
"""
import argparse
import json

import numpy as np

from freeconv import measures, spectrum, transforms


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--measure", default="scripts/specs/twocut.json")
    p.add_argument("--ts", default="1.02,1.05,1.1,1.2,1.5,2,3")
    p.add_argument("--after", type=float, default=1e-3, help="offset past t* for the quadratic-minimum fit")
    args = p.parse_args()

    spec = measures.load(args.measure)
    hat = transforms.hat_measure(spec)
    for t in map(float, args.ts.split(",")):
        rep = spectrum.support_semigroup(hat, spec, t)
        comps = ", ".join(f"[{a:.5f}, {b:.5f}]" for a, b in rep.components_z)
        print(f"t={t:<6g} {len(rep.components_z)} component(s): {comps}")

    cps = spectrum.critical_times(hat, spec)
    print(json.dumps([c.to_dict() for c in cps], indent=1))
    for cp in cps:
        try:
            cusp = spectrum.classify_semigroup_edge(hat, spec, cp.t_star, cp.z0)
            print(f"t*={cp.t_star:.8f} z0={cp.z0:+.6f}: {cusp.kind_label}, exponent {cusp.fitted_exponent:.4f}")
        except spectrum.SpectrumError as exc:
            print(f"t*={cp.t_star:.8f} z0={cp.z0:+.6f}: {type(exc).__name__}: {exc}")
        try:
            qm = spectrum.quadratic_minimum(hat, spec, cp.t_star + args.after, cp)
            print(f"  t*+{args.after:g}: {qm.kind_label}, exponent {qm.fitted_exponent:.4f}, "
                  f"min density {qm.details.get('rho_min', np.nan)}")
        except (spectrum.SpectrumError, ValueError) as exc:
            print(f"  t*+{args.after:g}: {type(exc).__name__}: {exc}")


if __name__ == "__main__":
    main()
