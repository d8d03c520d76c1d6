"""Transformer-encoder backend: marker-token hidden states -> logits.

Checkpoint layout (a directory):

* a Hugging Face encoder + tokenizer (``save_pretrained`` output) whose
  vocabulary includes the marker strings ``[THR]`` and ``[TAB]`` as
  additional special tokens, and
* ``logit_head.pt`` — a ``torch.nn.Linear(hidden_size, 1)`` state dict that
  maps a marker token's hidden state to its logit.

The input sequence is ``[THR] <query> [TAB] <table_1> [TAB] ...``; the
boundary logit comes from the ``[THR]`` position, each table's logit from
its ``[TAB]`` position, and (optionally) the ``[TAB]`` hidden states are
returned as table embeddings.
"""

from __future__ import annotations

from pathlib import Path

from .app import ScoreIn, TABLE_MARKER, THRESHOLD_MARKER

HEAD_FILE = "logit_head.pt"


class EncoderBackend:
    def __init__(
        self,
        model_path: str,
        max_tokens: int,
        device: str = "cpu",
        return_embeddings: bool = False,
    ):
        import torch
        from transformers import AutoModel, AutoTokenizer

        self._torch = torch
        path = Path(model_path)
        head_path = path / HEAD_FILE
        if not head_path.exists():
            raise FileNotFoundError(f"checkpoint is missing {HEAD_FILE}: {path}")
        self.tokenizer = AutoTokenizer.from_pretrained(path)
        self.model = AutoModel.from_pretrained(path).to(device).eval()
        self.thr_id = self.tokenizer.convert_tokens_to_ids(THRESHOLD_MARKER)
        self.tab_id = self.tokenizer.convert_tokens_to_ids(TABLE_MARKER)
        unk = self.tokenizer.unk_token_id
        if self.thr_id in (None, unk) or self.tab_id in (None, unk):
            raise ValueError(f"tokenizer at {path} lacks the {THRESHOLD_MARKER}/{TABLE_MARKER} special tokens")
        hidden = self.model.config.hidden_size
        self.head = torch.nn.Linear(hidden, 1)
        self.head.load_state_dict(torch.load(head_path, map_location=device))
        self.head.to(device).eval()
        self.device = device
        self.max_tokens = max_tokens
        self.return_embeddings = return_embeddings

    def _encode(self, body: ScoreIn):
        text = " ".join(
            [THRESHOLD_MARKER, body.query]
            + [part for table in body.tables for part in (TABLE_MARKER, table.text)]
        )
        return self.tokenizer(text, return_tensors="pt", add_special_tokens=False)

    def sequence_tokens(self, body: ScoreIn) -> int:
        return int(self._encode(body)["input_ids"].shape[1])

    def score(self, body: ScoreIn) -> dict:
        torch = self._torch
        encoded = self._encode(body).to(self.device)
        ids = encoded["input_ids"][0]
        thr_positions = (ids == self.thr_id).nonzero(as_tuple=True)[0]
        tab_positions = (ids == self.tab_id).nonzero(as_tuple=True)[0]
        if len(thr_positions) != 1 or len(tab_positions) != len(body.tables):
            raise ValueError("marker tokens did not survive tokenization")
        with torch.no_grad():
            hidden = self.model(**encoded).last_hidden_state[0]
            logits = self.head(hidden).squeeze(-1)
        payload = {
            "threshold_logit": float(logits[thr_positions[0]]),
            "table_logits": [float(logits[p]) for p in tab_positions],
        }
        if self.return_embeddings:
            payload["embeddings"] = [[float(x) for x in hidden[p]] for p in tab_positions]
        return payload
