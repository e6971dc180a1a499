"""Procedural sample scenes with grounded QA pairs.

Renders simple colored-shape scenes and writes a source annotation file in
the same shape a grounded multiple-choice dataset provides: per-QA question
text, four candidate answers, the correct index, and an {x, y, width, height}
grounding box in original image coordinates.  Used for pipeline validation
where the real dataset is unavailable.
"""

from __future__ import annotations

import json
import os
import random

from PIL import Image, ImageDraw

COLORS = {
    "red": (200, 40, 40),
    "green": (40, 170, 60),
    "blue": (50, 80, 220),
    "yellow": (230, 210, 40),
    "purple": (140, 60, 180),
    "orange": (240, 140, 30),
}
SHAPES = ("square", "circle", "triangle")
IMAGE_SIZE = 224


def _draw_shape(draw: ImageDraw.ImageDraw, shape: str, color: tuple, box: tuple) -> None:
    if shape == "square":
        draw.rectangle(box, fill=color)
    elif shape == "circle":
        draw.ellipse(box, fill=color)
    else:
        x0, y0, x1, y1 = box
        draw.polygon([(x0, y1), (x1, y1), ((x0 + x1) // 2, y0)], fill=color)


def render_scene(rng: random.Random, path: str) -> list[dict]:
    """Draw 3 distinct colored shapes; returns their descriptions and boxes."""
    image = Image.new("RGB", (IMAGE_SIZE, IMAGE_SIZE), (235, 235, 228))
    draw = ImageDraw.Draw(image)
    cells = rng.sample([(0, 0), (0, 1), (1, 0), (1, 1)], 3)
    names = rng.sample(sorted(COLORS), 3)
    objects = []
    for (cy, cx), color_name in zip(cells, names):
        shape = rng.choice(SHAPES)
        side = rng.randint(48, 88)
        x0 = cx * 112 + rng.randint(4, 112 - side - 4)
        y0 = cy * 112 + rng.randint(4, 112 - side - 4)
        _draw_shape(draw, shape, COLORS[color_name], (x0, y0, x0 + side, y0 + side))
        objects.append({
            "name": f"{color_name} {shape}",
            "box": {"x": x0, "y": y0, "width": side, "height": side},
        })
    image.save(path, format="PNG")
    return objects


def make_sample_dataset(out_dir: str, n_images: int = 25, qa_per_image: int = 4,
                        seed: int = 0, drop_grounding_every: int = 0) -> str:
    """Render scenes plus a QA annotation JSON; returns the annotation path.

    drop_grounding_every=k omits the grounding box from every k-th QA pair
    (0 keeps them all), mirroring sources with partial grounding coverage.
    """
    os.makedirs(out_dir, exist_ok=True)
    rng = random.Random(seed)
    images = []
    qa_pairs = []
    for i in range(n_images):
        image_id = f"img{i:04d}"
        filename = f"{image_id}.png"
        objects = render_scene(rng, os.path.join(out_dir, filename))
        images.append({"image_id": image_id, "path": filename,
                       "width": IMAGE_SIZE, "height": IMAGE_SIZE})
        for j in range(qa_per_image):
            target = rng.choice(objects)
            distractor_names = [o["name"] for o in objects if o["name"] != target["name"]]
            extra = [f"{c} {s}" for c in COLORS for s in SHAPES
                     if f"{c} {s}" not in {o['name'] for o in objects}]
            candidates = [target["name"]] + distractor_names[:2] + [rng.choice(extra)]
            rng.shuffle(candidates)
            qa = {
                "qa_id": f"qa{i:04d}_{j}",
                "image_id": image_id,
                "question": f"Which region shows the {target['name']}?",
                "candidates": candidates,
                "answer_index": candidates.index(target["name"]),
            }
            index = len(qa_pairs)
            if not (drop_grounding_every and (index + 1) % drop_grounding_every == 0):
                qa["grounding_box"] = dict(target["box"])
            qa_pairs.append(qa)
    annotation_path = os.path.join(out_dir, "qa.json")
    with open(annotation_path, "w", encoding="utf-8") as fh:
        json.dump({"images": images, "qa_pairs": qa_pairs,
                   "box_convention": "xywh_top_left"}, fh, indent=2)
        fh.write("\n")
    return annotation_path
