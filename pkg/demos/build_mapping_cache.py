"""Regenerate the measurement mappings shipped in ``fockcert/data/mappings.json``.

Each mapping is found by multi-start least squares on a fixed template of
pulse kinds.  The template, seed and restart count are stored next to the
sequence so any entry can be reproduced exactly.

    python3 demos/build_mapping_cache.py
"""

import json
from pathlib import Path

import fockcert
from fockcert.synthesis import TargetState, build_mapping_spec, optimize_mapping

RECIPES = {
    "01": dict(template="rcr", restarts=64, seed=0),
    "12": dict(template="rcrcr", restarts=64, seed=0),
    "012": dict(template="rcrcr", restarts=64, seed=0),
    "0123": dict(template="rcbcrcrcrcr", restarts=300, seed=5, init_max=3.0),
}
KINDS = {"r": "red", "c": "carrier", "b": "blue"}


def main():
    out = {}
    for levels, recipe in RECIPES.items():
        target = TargetState.equal([int(c) for c in levels])
        template = [KINDS[c] for c in recipe["template"]]
        kwargs = {k: v for k, v in recipe.items() if k != "template"}
        res = optimize_mapping(build_mapping_spec(target), template, **kwargs)
        print(f"{levels}: error {res.error:.2e}, {res.n_success}/{res.restarts} restarts "
              f"succeeded, total length {res.sequence.total_duration:.3f}")
        out[levels] = {"recipe": recipe, "error": res.error,
                       "sequence": res.sequence.to_dict()}
    path = Path(fockcert.__file__).parent / "data" / "mappings.json"
    path.write_text(json.dumps(out, indent=2) + "\n")
    print(f"wrote {path}")


if __name__ == "__main__":
    main()
