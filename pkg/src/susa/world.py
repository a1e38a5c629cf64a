"""Procedural graph worlds: navigation graphs, panoramas, and episodes.

A world is a pure function of WorldParams. All randomness flows from one
64-bit seed through `rng_for(seed, *keys)`, which maps string/int keys to
a numpy SeedSequence spawn key, so independent streams never collide.
"""
from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field, asdict

import numpy as np

WORLD_FILE_VERSION = 1

# shared vocabulary: control/action words first, then rooms/landmarks/objects
ACTION_WORDS = ["<pad>", "<unk>", "walk", "to", "then", "stop", "find", "in", "the"]


def rng_for(seed: int, *keys) -> np.random.Generator:
    """Independent generator for (seed, keys): splittable counter scheme."""
    spawn = tuple(k if isinstance(k, int) else zlib.crc32(str(k).encode()) for k in keys)
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=spawn))


@dataclass
class WorldParams:
    node_count_min: int = 15
    node_count_max: int = 30
    landmark_vocab_size: int = 24
    landmarks_per_room: int = 2
    objects_per_node_min: int = 1
    objects_per_node_max: int = 3
    n_views: int = 8
    d_v: int = 32
    seed: int = 0
    room_count: int = 12
    ambiguity: float = 0.0          # probability a room reuses pool landmarks
    rgb_noise_blend: float = 0.5    # weight of appearance noise vs landmark identity
    extra_edge_prob: float = 0.25
    max_depth_range: float = 10.0

    def validate(self):
        if self.node_count_min < 1 or self.node_count_max < self.node_count_min:
            raise ValueError("node_count range invalid")
        if self.d_v < 4:
            raise ValueError("d_v must be >= 4")
        for name in ("landmark_vocab_size", "landmarks_per_room", "n_views", "room_count"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.n_views > 36:
            raise ValueError("n_views capped at 36")


@dataclass
class View:
    heading_index: int
    landmark_tokens: list
    objects: list               # {"object_id", "token", "box": [x0,y0,x1,y1]}
    rgb_feature: np.ndarray
    depth_feature: np.ndarray


@dataclass
class Node:
    id: int
    position: tuple
    room_label: str


class NavGraph:
    """Undirected weighted graph with positions and a geodesic table."""

    def __init__(self, nodes: list[Node], edges: list[tuple[int, int]]):
        self.nodes = nodes
        self.edges = sorted({(min(i, j), max(i, j)) for i, j in edges})
        n = len(nodes)
        self.adj: dict[int, list[int]] = {nd.id: [] for nd in nodes}
        for i, j in self.edges:
            if i == j:
                raise ValueError("self-loop edge")
            self.adj[i].append(j)
            self.adj[j].append(i)
        for k in self.adj:
            self.adj[k].sort()
        self.geodesic, self._next_hop = all_pairs_shortest(self)
        if n > 1 and not np.isfinite(self.geodesic).all():
            raise ValueError("graph is disconnected")

    def edge_length(self, i: int, j: int) -> float:
        pi = np.array(self.nodes[i].position)
        pj = np.array(self.nodes[j].position)
        return float(np.linalg.norm(pi - pj))

    def shortest_path(self, src: int, dst: int) -> list[int]:
        """Node sequence along a shortest path (deterministic tie-breaks)."""
        path = [src]
        cur = src
        while cur != dst:
            cur = self._next_hop[cur][dst]
            path.append(cur)
        return path

    def bearing(self, src: int, dst: int) -> float:
        """Planar bearing src→dst in radians, in [0, 2π)."""
        p, q = self.nodes[src].position, self.nodes[dst].position
        return float(np.arctan2(q[1] - p[1], q[0] - p[0]) % (2 * np.pi))


def all_pairs_shortest(graph: NavGraph):
    """Floyd–Warshall all-pairs shortest paths with next-hop reconstruction."""
    n = len(graph.nodes)
    dist = np.full((n, n), np.inf)
    nxt = [[-1] * n for _ in range(n)]
    for i in range(n):
        dist[i, i] = 0.0
        nxt[i][i] = i
    for i, j in graph.edges:
        w = graph.edge_length(i, j)
        if w <= 0:
            raise ValueError(f"non-positive edge length between {i} and {j}")
        dist[i, j] = dist[j, i] = w
        nxt[i][j] = j
        nxt[j][i] = i
    for k in range(n):
        for i in range(n):
            dik = dist[i, k]
            if not np.isfinite(dik):
                continue
            for j in range(n):
                nd = dik + dist[k, j]
                if nd < dist[i, j] - 1e-12:
                    dist[i, j] = nd
                    nxt[i][j] = nxt[i][k]
    return dist, nxt


class World:
    """Immutable world: graph + per-node panoramas + vocabulary."""

    def __init__(self, params: WorldParams, graph: NavGraph,
                 panoramas: dict[int, list[View]], vocab: list[str]):
        self.params = params
        self.graph = graph
        self.panoramas = panoramas
        self.vocab = vocab
        self.token_to_id = {t: i for i, t in enumerate(vocab)}

    @property
    def n_views(self) -> int:
        return self.params.n_views


@dataclass
class Episode:
    episode_id: str
    instruction_tokens: list
    start_node: int
    goal_node: int
    gt_path: list
    target_object_id: str | None = None
    mode: str = "fine_grained"


def build_vocab(params: WorldParams) -> list[str]:
    vocab = list(ACTION_WORDS)
    vocab += [f"room_{i}" for i in range(params.room_count)]
    vocab += [f"lm_{i}" for i in range(params.landmark_vocab_size)]
    vocab += [f"obj_{i}" for i in range(params.landmark_vocab_size)]
    return vocab


def _heading_sector(world_or_n, bearing: float) -> int:
    """View index whose angular sector contains the bearing.

    Sector i is centered at 2πi/n, so it covers [2π(i-.5)/n, 2π(i+.5)/n).
    """
    n = world_or_n if isinstance(world_or_n, int) else world_or_n.n_views
    return int(np.floor((bearing * n / (2 * np.pi)) + 0.5)) % n


def _sample_graph(params: WorldParams, attempt: int):
    rng = rng_for(params.seed, "graph", attempt)
    count = int(rng.integers(params.node_count_min, params.node_count_max + 1))
    n_rooms = min(params.room_count, count)
    side = float(np.ceil(np.sqrt(n_rooms)))
    centers = []
    for r in range(n_rooms):
        gx, gy = r % side, r // side
        centers.append(np.array([gx * 6.0 + 3.0, gy * 6.0 + 3.0]))
    room_of = [i % n_rooms for i in range(count)]
    positions = []
    for i in range(count):
        c = centers[room_of[i]]
        # room diameter stays under the success radius d_th = 3.0
        # (max intra-room distance = 2 * sqrt(2) ≈ 2.83)
        jitter = rng.uniform(-1.0, 1.0, size=2)
        positions.append((float(c[0] + jitter[0]), float(c[1] + jitter[1]), 0.0))
    nodes = [Node(id=i, position=positions[i], room_label=f"room_{room_of[i]}")
             for i in range(count)]

    # spanning tree over a random vertex order guarantees connectivity
    pos = np.array([p[:2] for p in positions])
    edges = set()
    order = rng.permutation(count)
    in_tree = [int(order[0])]
    for v in order[1:]:
        v = int(v)
        d = np.linalg.norm(pos[in_tree] - pos[v], axis=1)
        u = in_tree[int(np.argmin(d))]
        edges.add((min(u, v), max(u, v)))
        in_tree.append(v)
    # extra local shortcuts
    for i in range(count):
        for j in range(i + 1, count):
            if (i, j) in edges:
                continue
            if np.linalg.norm(pos[i] - pos[j]) < 4.0 and rng.random() < params.extra_edge_prob:
                edges.add((i, j))
    # distinct positions ⇒ positive edge lengths; regenerate on collision
    if len({p for p in positions}) != count:
        return None
    return NavGraph(nodes, sorted(edges)), room_of, n_rooms


def _assign_landmarks(params: WorldParams, n_rooms: int) -> list[list[str]]:
    """Per-room landmark tokens. Ambiguity 0 ⇒ disjoint sets across rooms."""
    rng = rng_for(params.seed, "landmarks")
    v = params.landmark_vocab_size
    per = params.landmarks_per_room
    if n_rooms * per > v and params.ambiguity == 0.0:
        raise ValueError("landmark vocabulary too small for unambiguous assignment")
    pool = [f"lm_{i}" for i in rng.permutation(v)]
    room_landmarks = []
    cursor = 0
    shared = pool[:max(per, v // 4)]
    for r in range(n_rooms):
        toks = []
        for _ in range(per):
            if params.ambiguity > 0.0 and rng.random() < params.ambiguity:
                toks.append(shared[int(rng.integers(len(shared)))])
            else:
                toks.append(pool[cursor % v])
                cursor += 1
        room_landmarks.append(toks)
    return room_landmarks


def generate_world(params: WorldParams, max_retries: int = 8) -> World:
    params.validate()
    sampled = None
    for attempt in range(max_retries):
        sampled = _sample_graph(params, attempt)
        if sampled is not None:
            break
    if sampled is None:
        raise RuntimeError("failed to sample a valid connected graph")
    graph, room_of, n_rooms = sampled
    vocab = build_vocab(params)
    room_landmarks = _assign_landmarks(params, n_rooms)

    n = params.n_views
    d_v = params.d_v
    emb_rng = rng_for(params.seed, "lm_embed")
    lm_embed = {t: _unit(emb_rng.standard_normal(d_v)) for t in vocab}
    basis_rng = rng_for(params.seed, "depth_basis")
    depth_basis = basis_rng.standard_normal((4, d_v))

    panoramas: dict[int, list[View]] = {}
    for node in graph.nodes:
        nid = node.id
        own_landmarks = room_landmarks[room_of[nid]]
        obj_rng = rng_for(params.seed, "objects", nid)
        n_obj = int(obj_rng.integers(params.objects_per_node_min,
                                     params.objects_per_node_max + 1))
        objects = []
        for j in range(n_obj):
            tok = f"obj_{int(obj_rng.integers(params.landmark_vocab_size))}"
            x0, y0 = obj_rng.uniform(0.0, 0.6, size=2)
            w, h = obj_rng.uniform(0.1, 0.4, size=2)
            objects.append({"object_id": f"{nid}_{j}", "token": tok,
                            "box": [float(x0), float(y0),
                                    float(min(x0 + w, 1.0)), float(min(y0 + h, 1.0))]})

        # visible landmarks per view: own landmarks round-robin, plus the
        # landmarks of each neighbor's room in the view facing that neighbor
        view_landmarks = [[] for _ in range(n)]
        for j, tok in enumerate(own_landmarks):
            view_landmarks[j % n].append(tok)
        neighbor_dists = np.full(n, params.max_depth_range)
        for nb in graph.adj[nid]:
            sector = _heading_sector(n, graph.bearing(nid, nb))
            for tok in room_landmarks[room_of[nb]]:
                if tok not in view_landmarks[sector]:
                    view_landmarks[sector].append(tok)
            neighbor_dists[sector] = min(neighbor_dists[sector],
                                         graph.edge_length(nid, nb))

        views = []
        for h in range(n):
            noise = _unit(rng_for(params.seed, "rgbnoise", nid, h).standard_normal(d_v))
            toks = view_landmarks[h]
            if toks:
                lm_part = _unit(np.mean([lm_embed[t] for t in toks], axis=0))
            else:
                lm_part = np.zeros(d_v)
            a = params.rgb_noise_blend
            rgb = _unit(a * noise + (1.0 - a) * lm_part)
            # depth: pure local geometry — sector distances through a fixed basis
            prof = np.array([
                neighbor_dists[h],
                neighbor_dists[(h + 1) % n],
                neighbor_dists[(h - 1) % n],
                neighbor_dists.mean(),
            ]) / params.max_depth_range
            depth = _unit(prof @ depth_basis)
            views.append(View(heading_index=h,
                              landmark_tokens=list(toks),
                              objects=[o for k, o in enumerate(objects) if k % n == h],
                              rgb_feature=rgb, depth_feature=depth))
        panoramas[nid] = views
    return World(params, graph, panoramas, vocab)


def _unit(v: np.ndarray) -> np.ndarray:
    nrm = np.linalg.norm(v)
    return v if nrm == 0.0 else v / nrm


def observe(world: World, node_id: int):
    """Panorama plus ordered candidate list: index 0 = stop, then neighbors."""
    if node_id not in world.panoramas:
        raise KeyError(f"node {node_id} not in world")
    candidates = [{"node_id": None, "kind": "stop", "view_index": None}]
    for nb in sorted(world.graph.adj[node_id]):
        bearing = world.graph.bearing(node_id, nb)
        candidates.append({"node_id": nb, "kind": "move",
                           "view_index": _heading_sector(world, bearing)})
    return world.panoramas[node_id], candidates


def room_primary_landmark(world: World, node_id: int) -> str:
    views = world.panoramas[node_id]
    # first own landmark lives in view (node's round-robin slot 0)
    for v in views:
        if v.landmark_tokens:
            return v.landmark_tokens[0]
    return "<unk>"


def _node_room_landmarks(world: World, node_id: int) -> list[str]:
    seen = []
    for v in world.panoramas[node_id]:
        for t in v.landmark_tokens:
            if t not in seen:
                seen.append(t)
    return seen


def make_episode(world: World, seed: int, mode: str = "fine_grained") -> Episode:
    """Episode with a shortest ground-truth path and a templated instruction."""
    if mode not in ("fine_grained", "goal_oriented"):
        raise ValueError(f"unknown episode mode {mode!r}")
    rng = rng_for(world.params.seed, "episode", int(seed))
    n = len(world.graph.nodes)
    start = int(rng.integers(n))
    geo = world.graph.geodesic[start]
    eligible = [j for j in range(n) if j != start and np.isfinite(geo[j])]
    if eligible:
        # prefer mid-range goals: 2..4 hops typically
        hops = np.array([len(world.graph.shortest_path(start, j)) - 1 for j in eligible])
        pref = [j for j, h in zip(eligible, hops) if 2 <= h <= 4]
        pool = pref if pref else eligible
        goal = int(pool[int(rng.integers(len(pool)))])
        gt_path = world.graph.shortest_path(start, goal)
    else:
        goal = start
        gt_path = [start]

    goal_landmark = room_primary_landmark(world, goal)
    if mode == "fine_grained":
        tokens = ["walk", "to"]
        prev = None
        for node in gt_path[1:] if len(gt_path) > 1 else [goal]:
            lm = room_primary_landmark(world, node)
            if lm == prev:
                continue
            if prev is not None:
                tokens.append("then")
            tokens.append(lm)
            prev = lm
        if len(gt_path) == 1:
            tokens.append(goal_landmark)
        tokens.append("stop")
        target_object_id = None
    else:
        objs = [o for v in world.panoramas[goal] for o in v.objects]
        target = objs[int(rng.integers(len(objs)))] if objs else None
        room = world.graph.nodes[goal].room_label
        tokens = ["find", target["token"] if target else "<unk>", "in", "the", room,
                  goal_landmark]
        target_object_id = target["object_id"] if target else None
    return Episode(episode_id=f"w{world.params.seed}_e{seed}_{mode}",
                   instruction_tokens=tokens, start_node=start, goal_node=goal,
                   gt_path=gt_path, target_object_id=target_object_id, mode=mode)


# ---------------------------------------------------------------- file I/O

def world_to_dict(world: World) -> dict:
    return {
        "version": WORLD_FILE_VERSION,
        "params": asdict(world.params),
        "nodes": [{"id": nd.id, "pos": list(nd.position), "room": nd.room_label}
                  for nd in world.graph.nodes],
        "edges": [list(e) for e in world.graph.edges],
        "panoramas": {
            str(nid): [{"heading": v.heading_index,
                        "landmarks": v.landmark_tokens,
                        "objects": v.objects,
                        "rgb": v.rgb_feature.tolist(),
                        "depth": v.depth_feature.tolist()} for v in views]
            for nid, views in world.panoramas.items()
        },
    }


def save_world(world: World, path):
    with open(path, "w") as f:
        json.dump(world_to_dict(world), f)


def load_world(path) -> World:
    with open(path) as f:
        blob = json.load(f)
    if blob.get("version") != WORLD_FILE_VERSION:
        raise ValueError(f"unsupported world file version {blob.get('version')}")
    params = WorldParams(**blob["params"])
    nodes = [Node(id=n["id"], position=tuple(n["pos"]), room_label=n["room"])
             for n in blob["nodes"]]
    graph = NavGraph(nodes, [tuple(e) for e in blob["edges"]])
    panoramas = {}
    for nid, views in blob["panoramas"].items():
        panoramas[int(nid)] = [
            View(heading_index=v["heading"], landmark_tokens=v["landmarks"],
                 objects=v["objects"], rgb_feature=np.array(v["rgb"]),
                 depth_feature=np.array(v["depth"])) for v in views]
    return World(params, graph, panoramas, build_vocab(params))


def save_episodes(episodes: list[Episode], path):
    with open(path, "w") as f:
        for ep in episodes:
            f.write(json.dumps(asdict(ep)) + "\n")


def load_episodes(path) -> list[Episode]:
    episodes = []
    with open(path) as f:
        for line in f:
            if line.strip():
                episodes.append(Episode(**json.loads(line)))
    return episodes
