#!/usr/bin/env python3
"""Regenerate the OBJ meshes referenced by the scene configs.

Run from the repository root:  python3 scripts/make_meshes.py
"""

from pathlib import Path

from diffcontact.geometry import (
    make_box,
    make_ground_quad,
    make_icosphere,
    make_octahedron,
    save_obj,
)

OUT = Path(__file__).resolve().parent.parent / "configs" / "meshes"


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    v, f = make_octahedron(0.1, face_down=True)
    save_obj(OUT / "octa_ball_r01.obj", v, f)
    v, f = make_icosphere(0.1, 0)
    save_obj(OUT / "ico_ball_r01.obj", v, f)
    v, f = make_icosphere(0.2, 1)
    save_obj(OUT / "icosphere_r02.obj", v, f)
    v, f = make_ground_quad(1.5)
    save_obj(OUT / "ground_quad.obj", v, f)
    v, f = make_box((0.2, 0.2, 0.2))
    save_obj(OUT / "box_02.obj", v, f)
    v, f = make_box((0.08, 0.08, 0.4))
    save_obj(OUT / "rod.obj", v, f)
    print(f"wrote meshes to {OUT}")


if __name__ == "__main__":
    main()
