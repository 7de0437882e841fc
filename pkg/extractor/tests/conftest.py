import json

import numpy as np
import pytest
from PIL import Image


@pytest.fixture
def toy_corpus(tmp_path):
    """Ten tiny generated images with claim texts; returns the corpus path."""
    rng = np.random.default_rng(4242)
    image_dir = tmp_path / "images"
    image_dir.mkdir()
    lines = []
    claims = [
        "crowd gathers outside the old station",
        "flood waters reach the market square",
        "mayor opens the new bridge at dawn",
        "storm damage closes the coastal road",
        "volunteers sort donated winter clothes",
        "smoke rises over the harbor district",
        "rescue teams search the collapsed mall",
        "protesters march along the main avenue",
        "wildfire approaches the mountain village",
        "officials deny the viral power-cut claim",
    ]
    for i, claim in enumerate(claims):
        pixels = rng.integers(0, 256, size=(24, 24, 3), dtype=np.uint8)
        path = image_dir / f"img{i}.png"
        Image.fromarray(pixels).save(path)
        lines.append(
            json.dumps(
                {"id": f"t{i}", "image": f"images/img{i}.png", "text": claim, "label": i % 2}
            )
        )
    corpus_path = tmp_path / "corpus.jsonl"
    corpus_path.write_text("\n".join(lines) + "\n")
    return corpus_path
