#!/usr/bin/env python3
"""Writes data/testbed_map.txt: a 6.0 m x 5.5 m four-way intersection
encircled by a one-way beltway loop.

Node ids:      1d entry, 2d exit, 3d beltway (approach start), 4d beltway
               (departure end), with d = 0 east, 1 north, 2 west, 3 south.
Segment ids:   10d approach, 20d departure, 30d straight, 40d left turn,
               50k beltway loop.
"""
import argparse
import math
from pathlib import Path

CENTER = (3.0, 2.75)
LANE_OFFSET = 0.45      # lane centre to road axis; islands split the two directions
NODE_DIST = 1.7         # entry / exit nodes, from the intersection centre
TURN_RADIUS = 0.9
REGION_HALF = 1.6       # managed intersection area
COVERAGE_HALF = 2.0     # V2I / sensing coverage
BELT = (0.3, 0.3, 5.7, 5.2)
BELT_CORNER = 0.4
SPACING = 0.05

ARMS = [(1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0)]


def add(a, b):
    return (a[0] + b[0], a[1] + b[1])


def scale(s, a):
    return (s * a[0], s * a[1])


def right_of(v):
    return (v[1], -v[0])


def left_of(v):
    return (-v[1], v[0])


def inbound_point(d, t):
    u = ARMS[d]
    r_in = right_of(scale(-1.0, u))
    return add(CENTER, add(scale(t, u), scale(LANE_OFFSET, r_in)))


def outbound_point(d, t):
    u = ARMS[d]
    r_out = right_of(u)
    return add(CENTER, add(scale(t, u), scale(LANE_OFFSET, r_out)))


def line(a, b):
    n = max(1, math.ceil(math.dist(a, b) / SPACING))
    return [add(a, scale(i / n, (b[0] - a[0], b[1] - a[1]))) for i in range(n + 1)]


def arc(center, radius, a0, a1):
    n = max(1, math.ceil(abs(a1 - a0) * radius / SPACING))
    return [add(center, (radius * math.cos(a0 + (a1 - a0) * i / n),
                         radius * math.sin(a0 + (a1 - a0) * i / n))) for i in range(n + 1)]


def join(*pieces):
    out = []
    for piece in pieces:
        for p in piece:
            if out and math.dist(out[-1], p) < 1e-12:
                continue
            out.append(p)
    return out


def clean(p):
    return (round(p[0], 12) + 0.0, round(p[1], 12) + 0.0)


def belt_crossing(d, inbound):
    """Point where arm d's lane meets the beltway rectangle."""
    x0, y0, x1, y1 = BELT
    p = inbound_point(d, 1.0) if inbound else outbound_point(d, 1.0)
    if d == 0:
        return (x1, p[1])
    if d == 1:
        return (p[0], y1)
    if d == 2:
        return (x0, p[1])
    return (p[0], y0)


def belt_perimeter_param(p):
    """Counter-clockwise arclength parameter along the beltway rectangle."""
    x0, y0, x1, y1 = BELT
    w, h = x1 - x0, y1 - y0
    if abs(p[1] - y0) < 1e-9:
        return p[0] - x0
    if abs(p[0] - x1) < 1e-9:
        return w + (p[1] - y0)
    if abs(p[1] - y1) < 1e-9:
        return w + h + (x1 - p[0])
    return 2 * w + h + (y1 - p[1])


def belt_path(p, q):
    """Counter-clockwise beltway polyline from p to q with rounded corners."""
    x0, y0, x1, y1 = BELT
    r = BELT_CORNER
    corners = [  # (perimeter param of the corner, arc pieces)
        (x1 - x0, (x1 - r, y0), (x1 - r, y0 + r), -math.pi / 2, 0.0, (x1, y0 + r)),
        ((x1 - x0) + (y1 - y0), (x1, y1 - r), (x1 - r, y1 - r), 0.0, math.pi / 2, (x1 - r, y1)),
        (2 * (x1 - x0) + (y1 - y0), (x0 + r, y1), (x0 + r, y1 - r), math.pi / 2, math.pi, (x0, y1 - r)),
        (2 * (x1 - x0) + 2 * (y1 - y0), (x0, y0 + r), (x0 + r, y0 + r), math.pi, 1.5 * math.pi, (x0 + r, y0)),
    ]
    total = 2 * (x1 - x0) + 2 * (y1 - y0)
    sp, sq = belt_perimeter_param(p), belt_perimeter_param(q)
    if sq <= sp:
        sq += total
    pieces = []
    cur = p
    for lap in (0.0, total):
        for cparam, a_start, c, t0, t1, a_end in corners:
            cp = cparam + lap
            if sp < cp < sq:
                pieces.append(line(cur, a_start))
                pieces.append(arc(c, r, t0, t1))
                cur = a_end
    pieces.append(line(cur, q))
    return join(*pieces)


def main(out_path):
    nodes = {}
    segments = []
    for d in range(4):
        nodes[10 + d] = inbound_point(d, NODE_DIST)
        nodes[20 + d] = outbound_point(d, NODE_DIST)
        nodes[30 + d] = belt_crossing(d, True)
        nodes[40 + d] = belt_crossing(d, False)

    for d in range(4):
        segments.append((100 + d, 30 + d, 10 + d, line(nodes[30 + d], nodes[10 + d])))
        segments.append((200 + d, 20 + d, 40 + d, line(nodes[20 + d], nodes[40 + d])))
        opposite = (d + 2) % 4
        segments.append((300 + d, 10 + d, 20 + opposite, line(nodes[10 + d], nodes[20 + opposite])))
        # Left turn: lead-in, quarter arc, lead-out.
        travel = scale(-1.0, ARMS[d])
        target = (d + 3) % 4
        u_t = ARMS[target]
        assert math.isclose(left_of(travel)[0], u_t[0]) and math.isclose(left_of(travel)[1], u_t[1])
        # Corner where the inbound lane line meets the target outbound lane line.
        a_in = inbound_point(d, 0.0)
        b_out = outbound_point(target, 0.0)
        # a_in + s * travel lies on the line b_out + t * u_t
        if abs(travel[0]) > 0.5:
            corner = (b_out[0], a_in[1])
        else:
            corner = (a_in[0], b_out[1])
        arc_start = add(corner, scale(-TURN_RADIUS, travel))
        arc_end = add(corner, scale(TURN_RADIUS, u_t))
        centre = add(arc_start, scale(TURN_RADIUS, left_of(travel)))
        a0 = math.atan2(arc_start[1] - centre[1], arc_start[0] - centre[0])
        segments.append((400 + d, 10 + d, 20 + target,
                         join(line(nodes[10 + d], arc_start), arc(centre, TURN_RADIUS, a0, a0 + math.pi / 2),
                              line(arc_end, nodes[20 + target]))))

    ring = sorted([30 + d for d in range(4)] + [40 + d for d in range(4)],
                  key=lambda n: belt_perimeter_param(nodes[n]))
    for k, n in enumerate(ring):
        m = ring[(k + 1) % len(ring)]
        segments.append((500 + k, n, m, belt_path(nodes[n], nodes[m])))

    def square(half):
        cx, cy = CENTER
        return [(cx - half, cy - half), (cx + half, cy - half), (cx + half, cy + half), (cx - half, cy + half)]

    regions = [
        ("intersection", square(REGION_HALF)),
        ("v2i_coverage", square(COVERAGE_HALF)),
        ("map_boundary", [(0.0, 0.0), (6.0, 0.0), (6.0, 5.5), (0.0, 5.5)]),
    ]

    fmt = lambda v: repr(float(v))
    lines = ["roadmap 1",
             "# Four-way unsignalized intersection with a beltway loop, 6.0 m x 5.5 m.",
             "# Generated by scripts/gen_testbed_map.py. Units: meters.",
             "[nodes]"]
    for nid in sorted(nodes):
        p = clean(nodes[nid])
        lines.append(f"{nid} {fmt(p[0])} {fmt(p[1])}")
    lines.append("[segments]")
    for sid, a, b, pts in sorted(segments):
        pts = [clean(p) for p in pts]
        coords = " ".join(f"{fmt(x)} {fmt(y)}" for x, y in pts)
        lines.append(f"{sid} {a} {b} {len(pts)} {coords}")
    lines.append("[regions]")
    for name, poly in regions:
        poly = [clean(p) for p in poly]
        lines.append(f"{name} {len(poly)} " + " ".join(f"{fmt(x)} {fmt(y)}" for x, y in poly))
    Path(out_path).write_text("\n".join(lines) + "\n")


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description="Write the testbed road map.")
    parser.add_argument("out", nargs="?", default=str(Path(__file__).resolve().parent.parent / "data" / "testbed_map.txt"))
    main(parser.parse_args().out)
