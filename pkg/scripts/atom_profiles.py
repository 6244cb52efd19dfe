"""Density next to an atom of mu: plateau (A > 0) and divergence (A = 0) cases."""
import argparse

from freeconv import measures, spectrum, transforms

CASES = [
    ("scripts/specs/plateau.json", 1.5, 0.0),
    ("scripts/specs/bernoulli.json", 2.0, 1.0),
    ("scripts/specs/cusp3atom.json", 2.0, 0.0),
]


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--csv-dir", help="write each profile as CSV here")
    args = p.parse_args()
    for path, t, x in CASES:
        spec = measures.load(path)
        prof, rep = spectrum.atom_profile(transforms.hat_measure(spec), spec, t, x)
        print(f"{path} t={t} atom={x}: case {prof.case}, kind {rep.kind_label}")
        print(f"  fitted exponents left/right: {prof.fitted_left}, {prof.fitted_right}")
        if prof.plateau is not None:
            print(f"  plateau {prof.plateau:.9f}, theory {prof.theory_constant:.9f}")
        if args.csv_dir:
            name = path.rsplit("/", 1)[-1].replace(".json", f"_t{t:g}.csv")
            with open(f"{args.csv_dir}/{name}", "w") as fh:
                fh.write(prof.to_csv())


if __name__ == "__main__":
    main()
