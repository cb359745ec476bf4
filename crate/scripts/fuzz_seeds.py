"""Writes fuzz corpus seeds under fuzz/corpus/<target>/ from the fixtures."""
import base64
import json
import os
import shutil

from cryptography.hazmat.primitives.ciphers.aead import AESGCM

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
CORPUS = os.path.join(ROOT, "fuzz", "corpus")


def put(target, name, data):
    d = os.path.join(CORPUS, target)
    os.makedirs(d, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    with open(os.path.join(d, name), mode) as f:
        f.write(data)


def copy(target, rel, name=None):
    d = os.path.join(CORPUS, target)
    os.makedirs(d, exist_ok=True)
    shutil.copy(os.path.join(ROOT, rel), os.path.join(d, name or os.path.basename(rel)))


def blob(plaintext, key_id="fuzz"):
    algorithm = "AES-256-GCM"
    nonce = bytes(range(12))
    ct = AESGCM(bytes([7] * 32)).encrypt(nonce, plaintext, f"{algorithm}|{key_id}".encode())
    return json.dumps({
        "algorithm": algorithm,
        "key_id": key_id,
        "nonce": base64.b64encode(nonce).decode(),
        "ciphertext": base64.b64encode(ct).decode(),
    })


def main():
    copy("parse_coco", "fixtures/coco/mini.json")
    copy("parse_coco", "fixtures/coco/food.json")
    put("parse_coco", "empty.json", '{"images": [], "annotations": [], "categories": []}')

    copy("parse_id_list", "fixtures/splits/food-seed-7/val.txt")
    put("parse_id_list", "blank-lines.txt", "3\n\n1\n2\n")

    copy("parse_catalog", "crates/core/fixtures/seed-catalog.jsonl")
    with open(os.path.join(ROOT, "fixtures/survey/responses-385.jsonl")) as f:
        put("parse_responses", "head.jsonl", "".join(f.readlines()[:40]))

    copy("preprocess_config", "config/preprocess.example.toml")
    put("preprocess_config", "identity.toml", "flip_probability = 0.0\ncrop_scale_range = [1.0, 1.0]\n")
    copy("restriction_map", "crates/core/fixtures/restrictions.toml")
    copy("server_config", "config/dietwise.example.toml")

    put("detector_response", "two-boxes.json", json.dumps({
        "detector_id": "remote-1",
        "boxes": [
            {"x": 1, "y": 2, "w": 30, "h": 40, "label": "pizza", "confidence": 0.9},
            {"x": 0, "y": 0, "w": 5, "h": 5, "label": "cake", "confidence": 0.51},
        ],
    }))
    put("detector_response", "empty.json", '{"detector_id": "remote-1", "boxes": []}')

    put("encrypted_blob", "conditions.json", blob(b'["diabetes-type-2"]'))
    put("encrypted_blob", "empty.json", blob(b""))

    copy("decode_image", "fixtures/images/plate-96x72.png")
    copy("decode_image", "fixtures/images/gradient-16x12.ppm")

    ops = [
        {"ops": [{"op": "put", "ns": "foods", "key": "pizza", "value": {"id": "pizza"}}]},
        {"ops": [{"op": "put", "ns": "users", "key": "u1", "value": {"name": "a"}},
                 {"op": "put", "ns": "user-names", "key": "a", "value": "u1"}]},
        {"ops": [{"op": "delete", "ns": "users", "key": "u1"}]},
    ]
    put("store_log", "three-records.log", "".join(json.dumps(r) + "\n" for r in ops))
    put("store_log", "torn-tail.log", json.dumps(ops[0]) + "\n" + '{"ops": [{"op": "pu')


if __name__ == "__main__":
    main()
