"""Fitted square-root edge constants against the analytic value, for both readings of the numerator."""
import argparse

from freeconv import measures, spectrum, transforms


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--t", type=float, default=1.3)
    args = p.parse_args()
    spec = measures.validate({"components": [
        {"support": [-2, -1], "left_exponent": 0.5, "right_exponent": -0.5, "weight": 0.5},
        {"support": [1, 2], "left_exponent": -0.5, "right_exponent": 0.5, "weight": 0.5}]})
    hat = transforms.hat_measure(spec)
    rep = spectrum.support_semigroup(hat, spec, args.t)
    print(f"{'edge':>10} {'kind':>16} {'exp':>7} {'fitted':>12} {'|m|^2 form':>12} {'literal':>12}")
    for e, w in zip(rep.edges, [w for c in rep.components_omega for w in c]):
        r = spectrum.classify_semigroup_edge(hat, spec, args.t, e, rep)
        lit = spectrum.sqrt_edge_constant_literal(spec, args.t, w)
        print(f"{e:10.6f} {r.kind_label:>16} {r.fitted_exponent:7.4f} {r.fitted_constant:12.8f} "
              f"{r.theory_constant:12.8f} {lit:12.8f}")


if __name__ == "__main__":
    main()
