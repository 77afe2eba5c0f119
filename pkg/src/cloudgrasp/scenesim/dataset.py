"""Episode dataset files: `index.jsonl` + `blobs.bin` in one directory.

Each index line is a JSON record describing one episode: scene parameters,
camera poses/intrinsics, and (offset, shape) references into blobs.bin.
Blobs are little-endian 32-bit floats, concatenated in write order; masks
store instance ids (small integers, exact in float32). Round trips are
bit-exact for everything stored.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict

import numpy as np

from ..geometry import CameraIntrinsics, RigidTransform, BASE_FRAME, camera_frame
from .episode import Episode
from .primitives import PrimitiveObject, shape_from_dict
from .render import Snapshot
from .scene import Scene

FORMAT_VERSION = "episodes-v1"
GRASP_FORMAT_VERSION = "grasp-records-v1"


class _BlobWriter:
    def __init__(self, path: str):
        self.f = open(path, "wb")
        self.offset = 0

    def write(self, arr: np.ndarray) -> dict:
        a = np.ascontiguousarray(arr, dtype="<f4")
        ref = {"offset": self.offset, "shape": list(a.shape)}
        self.f.write(a.tobytes())
        self.offset += a.nbytes
        return ref

    def close(self):
        self.f.close()


class _BlobReader:
    def __init__(self, path: str):
        self.data = np.fromfile(path, dtype="<f4")

    def read(self, ref: dict) -> np.ndarray:
        n = int(np.prod(ref["shape"])) if ref["shape"] else 1
        start = ref["offset"] // 4
        return self.data[start:start + n].reshape(ref["shape"]).astype(np.float64)


def _pose_to_dict(t: RigidTransform) -> dict:
    return {"rotation": t.rotation.tolist(), "translation": t.translation.tolist(),
            "from_frame": t.from_frame, "to_frame": t.to_frame}


def _pose_from_dict(d: dict) -> RigidTransform:
    return RigidTransform(np.array(d["rotation"]), np.array(d["translation"]),
                          d["from_frame"], d["to_frame"])


def write_episode_dataset(path: str, episodes: list[Episode], meta: dict | None = None):
    """Write episodes to a dataset directory (created if needed)."""
    os.makedirs(path, exist_ok=True)
    blobs = _BlobWriter(os.path.join(path, "blobs.bin"))
    lines = []
    header = {"format": FORMAT_VERSION, "count": len(episodes)}
    if meta:
        header["meta"] = meta
    lines.append(json.dumps(header, sort_keys=True))
    for ep in episodes:
        rec = {
            "seed": ep.seed,
            "table_height": ep.scene.table_height,
            "objects": [
                {"instance_id": o.instance_id, "shape": o.shape.to_dict(),
                 "pose": _pose_to_dict(o.pose), "color": o.color.tolist()}
                for o in ep.scene.objects
            ],
            "snapshots": [
                {"view_index": s.view_index, "pose": _pose_to_dict(s.camera_pose),
                 "intrinsics": asdict(s.intrinsics),
                 "depth": blobs.write(s.depth),
                 "color": blobs.write(s.color),
                 "mask": blobs.write(s.mask.astype(np.float64))}
                for s in ep.snapshots
            ],
            "gt_clouds": {str(k): blobs.write(v) for k, v in ep.gt_clouds.items()},
        }
        lines.append(json.dumps(rec, sort_keys=True))
    blobs.close()
    with open(os.path.join(path, "index.jsonl"), "w") as f:
        f.write("\n".join(lines) + "\n")


def read_episode_dataset(path: str) -> tuple[list[Episode], dict]:
    """Read a dataset directory back into Episode objects."""
    index_path = os.path.join(path, "index.jsonl")
    if not os.path.exists(index_path):
        raise FileNotFoundError(f"no dataset at {path}")
    with open(index_path) as f:
        lines = [json.loads(line) for line in f if line.strip()]
    header, recs = lines[0], lines[1:]
    if header.get("format") != FORMAT_VERSION:
        raise ValueError(f"unsupported dataset format {header.get('format')!r}")
    blobs = _BlobReader(os.path.join(path, "blobs.bin"))

    episodes = []
    for rec in recs:
        objects = [
            PrimitiveObject(shape_from_dict(o["shape"]), _pose_from_dict(o["pose"]),
                            o["instance_id"], np.array(o["color"]))
            for o in rec["objects"]
        ]
        scene = Scene(rec["table_height"], objects)
        snapshots = []
        for s in rec["snapshots"]:
            intr = CameraIntrinsics(**s["intrinsics"])
            snapshots.append(Snapshot(
                view_index=s["view_index"],
                camera_pose=_pose_from_dict(s["pose"]),
                intrinsics=intr,
                depth=blobs.read(s["depth"]),
                color=blobs.read(s["color"]),
                mask=blobs.read(s["mask"]).astype(np.int64),
            ))
        gt = {int(k): blobs.read(ref) for k, ref in rec["gt_clouds"].items()}
        episodes.append(Episode(rec["seed"], scene, snapshots, gt))
    return episodes, header.get("meta", {})


def write_grasp_records(path: str, records, meta: dict | None = None):
    """Store grasp records in the same index.jsonl + blobs.bin container."""
    os.makedirs(path, exist_ok=True)
    blobs = _BlobWriter(os.path.join(path, "blobs.bin"))
    header = {"format": GRASP_FORMAT_VERSION, "count": len(records)}
    if meta:
        header["meta"] = meta
    lines = [json.dumps(header, sort_keys=True)]
    for r in records:
        lines.append(json.dumps({
            "episode_seed": r.episode_seed,
            "instance_id": r.instance_id,
            "view_index": r.view_index,
            "sample": {"p": r.sample.p.tolist(), "psi": r.sample.psi},
            "cam_to_base": _pose_to_dict(r.cam_to_base),
            "success": r.success,
            "cloud": blobs.write(r.cloud),
            "partial_cloud": blobs.write(r.partial_cloud),
        }, sort_keys=True))
    blobs.close()
    with open(os.path.join(path, "index.jsonl"), "w") as f:
        f.write("\n".join(lines) + "\n")


def read_grasp_records(path: str):
    """Load grasp records written by write_grasp_records."""
    from ..critic import GraspEpisodeRecord
    from ..grasp import GraspSample

    index_path = os.path.join(path, "index.jsonl")
    if not os.path.exists(index_path):
        raise FileNotFoundError(f"no grasp dataset at {path}")
    with open(index_path) as f:
        lines = [json.loads(line) for line in f if line.strip()]
    header, recs = lines[0], lines[1:]
    if header.get("format") != GRASP_FORMAT_VERSION:
        raise ValueError(f"unsupported grasp dataset format {header.get('format')!r}")
    blobs = _BlobReader(os.path.join(path, "blobs.bin"))
    out = []
    for r in recs:
        out.append(GraspEpisodeRecord(
            episode_seed=r["episode_seed"],
            instance_id=r["instance_id"],
            view_index=r["view_index"],
            cloud=blobs.read(r["cloud"]),
            partial_cloud=blobs.read(r["partial_cloud"]),
            sample=GraspSample(np.array(r["sample"]["p"]), r["sample"]["psi"]),
            cam_to_base=_pose_from_dict(r["cam_to_base"]),
            success=r["success"],
        ))
    return out, header.get("meta", {})
