"""Render one threat at every concealment sublevel and save a contact sheet.

Usage: python3 demos/concealment_ladder.py [category] [output.png]
"""
import sys

import numpy as np
from PIL import Image

from xraybag.captions import caption_rng, default_pools, generate_caption
from xraybag.composer import compose_scene
from xraybag.render import render
from xraybag.scene import SceneSpec, ThreatSpec


def main(category: str, path: str) -> None:
    tiles = []
    for level in range(1, 11):
        spec = SceneSpec(7, "suitcase", "Medium", level, (ThreatSpec(category, "center", "horizontal"),))
        vol, md, _ = compose_scene(spec)
        tiles.append(render(vol, spec.image_size).rgb())
        text = generate_caption(md, default_pools(), caption_rng(0, f"level-{level}")).text
        print(f"{level:>2}  coverage {md.threats[0].coverage:.2f}  {text}")
    sheet = np.concatenate([np.concatenate(tiles[:5], axis=1), np.concatenate(tiles[5:], axis=1)], axis=0)
    Image.fromarray(sheet).save(path)
    print("saved", path)


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "pliers", sys.argv[2] if len(sys.argv) > 2 else "ladder.png")
