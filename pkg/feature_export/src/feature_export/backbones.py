"""Backbone loading for the export scripts.

The default specs name the intended pretrained checkpoints (a DeiT vision
encoder and a DeBERTa text encoder).  A spec of the form "tiny" or
"tiny:<seed>" instead builds the same architectures at toy width with
deterministic random weights and a locally constructed byte-level tokenizer,
so the full export pipeline runs in environments that cannot fetch model
weights.  Either way the models run in eval mode and are deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

DEFAULT_VISION = "facebook/deit-base-distilled-patch16-224"
DEFAULT_TEXT = "microsoft/deberta-base"


class BackboneError(RuntimeError):
    """The requested backbone could not be loaded."""


@dataclass
class VisionBackbone:
    model: torch.nn.Module
    image_size: int
    patch_size: int
    hidden_size: int

    @property
    def grid_side(self) -> int:
        return self.image_size // self.patch_size

    @property
    def n_patches(self) -> int:
        return self.grid_side * self.grid_side


@dataclass
class TextBackbone:
    model: torch.nn.Module
    tokenizer: object
    hidden_size: int


def _parse_tiny(spec: str) -> int | None:
    if spec == "tiny":
        return 0
    if spec.startswith("tiny:"):
        try:
            return int(spec.split(":", 1)[1])
        except ValueError as exc:
            raise BackboneError(f"bad tiny spec {spec!r}") from exc
    return None


def _tiny_vision(seed: int) -> VisionBackbone:
    from transformers import DeiTConfig, DeiTModel

    torch.manual_seed(seed)
    config = DeiTConfig(hidden_size=32, num_hidden_layers=2, num_attention_heads=4,
                        intermediate_size=64, image_size=224, patch_size=16)
    model = DeiTModel(config).eval()
    return VisionBackbone(model=model, image_size=224, patch_size=16, hidden_size=32)


def build_local_tokenizer():
    """Byte-level tokenizer built from scratch: 5 specials + the 256-char
    byte alphabet, no merges.  Needs no downloaded files."""
    from tokenizers.pre_tokenizers import ByteLevel
    from transformers import DebertaTokenizer

    vocab = {"[PAD]": 0, "[CLS]": 1, "[SEP]": 2, "[UNK]": 3, "[MASK]": 4}
    for ch in sorted(ByteLevel.alphabet()):
        vocab[ch] = len(vocab)
    return DebertaTokenizer(vocab=vocab, merges=[])


def _tiny_text(seed: int) -> TextBackbone:
    from transformers import DebertaConfig, DebertaModel

    tokenizer = build_local_tokenizer()
    torch.manual_seed(seed)
    config = DebertaConfig(hidden_size=32, num_hidden_layers=2, num_attention_heads=4,
                           intermediate_size=64, vocab_size=len(tokenizer),
                           max_position_embeddings=512)
    model = DebertaModel(config).eval()
    return TextBackbone(model=model, tokenizer=tokenizer, hidden_size=32)


def load_vision_backbone(spec: str = DEFAULT_VISION) -> VisionBackbone:
    seed = _parse_tiny(spec)
    if seed is not None:
        return _tiny_vision(seed)
    try:
        from transformers import AutoModel
        model = AutoModel.from_pretrained(spec).eval()
    except Exception as exc:
        raise BackboneError(f"cannot load vision backbone {spec!r}: {exc}") from exc
    config = model.config
    if not hasattr(config, "image_size") or not hasattr(config, "patch_size"):
        raise BackboneError(f"{spec!r} is not a patch-based vision model")
    return VisionBackbone(model=model, image_size=config.image_size,
                          patch_size=config.patch_size, hidden_size=config.hidden_size)


def load_text_backbone(spec: str = DEFAULT_TEXT) -> TextBackbone:
    seed = _parse_tiny(spec)
    if seed is not None:
        return _tiny_text(seed)
    try:
        from transformers import AutoModel, AutoTokenizer
        tokenizer = AutoTokenizer.from_pretrained(spec)
        model = AutoModel.from_pretrained(spec).eval()
    except Exception as exc:
        raise BackboneError(f"cannot load text backbone {spec!r}: {exc}") from exc
    return TextBackbone(model=model, tokenizer=tokenizer,
                        hidden_size=model.config.hidden_size)
