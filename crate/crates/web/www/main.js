import init, { failoverTimeline, fpCurve, windowSweep } from "./pkg/pointsim_web.js";

const NS = "http://www.w3.org/2000/svg";
const status = document.getElementById("status");

function el(name, attrs, parent) {
  const e = document.createElementNS(NS, name);
  for (const [k, v] of Object.entries(attrs)) e.setAttribute(k, v);
  parent.appendChild(e);
  return e;
}

function text(parent, x, y, s, anchor = "start") {
  el("text", { x, y, "font-size": 11, "text-anchor": anchor }, parent).textContent = s;
}

// Runs `work` after the browser has painted the busy message.
function busy(button, work) {
  button.disabled = true;
  status.textContent = "";
  setTimeout(() => {
    try {
      work();
    } catch (e) {
      status.textContent = String(e);
    } finally {
      button.disabled = false;
    }
  }, 20);
}

function drawTimelines(svg, runs) {
  svg.replaceChildren();
  const w = +svg.getAttribute("width"), left = 110, right = 20;
  const span = runs[0].duration_ms;
  const x = (t) => left + (t / span) * (w - left - right);
  let y = 20;
  for (const run of runs) {
    for (const lane of run.lanes) {
      text(svg, 4, y + 12, `${run.mode} ${lane.stb}`);
      el("rect", { x: left, y, width: w - left - right, height: 16, fill: "#dfe" }, svg);
      for (const [a, b] of lane.gaps) {
        el("rect", { x: x(a), y, width: Math.max(1.5, x(b) - x(a)), height: 16, fill: "#c33" }, svg);
      }
      y += 24;
    }
  }
  for (const [t, link, up] of runs[0].link_events) {
    el("line", { x1: x(t), x2: x(t), y1: 10, y2: y, stroke: up ? "#393" : "#333", "stroke-dasharray": 3 }, svg);
    text(svg, x(t) + 2, y + 12, `${link} ${up ? "up" : "down"}`);
  }
  for (let s = 0; s <= span / 1000; s += 10) text(svg, x(s * 1000), 10, `${s}s`, "middle");
}

document.getElementById("failover").addEventListener("submit", (ev) => {
  ev.preventDefault();
  const f = new FormData(ev.target);
  busy(ev.submitter, () => {
    const runs = ["icn", "ip"].map((m) => JSON.parse(failoverTimeline(m, +f.get("detection"), +f.get("reconvergence"))));
    drawTimelines(document.getElementById("failover-plot"), runs);
    document.getElementById("failover-out").textContent = runs
      .flatMap((r) => r.lanes.map((l) => `${r.mode} ${l.stb}: longest gap ${l.longest_ms.toFixed(1)} ms`))
      .join("\n");
  });
});

function drawCurve(svg, pts) {
  svg.replaceChildren();
  const w = +svg.getAttribute("width"), h = +svg.getAttribute("height"), pad = 40;
  const maxN = pts[pts.length - 1].n;
  const maxY = Math.max(0.01, ...pts.map((p) => Math.max(p.measured, p.analytic)));
  const x = (n) => pad + ((n - 1) / Math.max(1, maxN - 1)) * (w - 2 * pad);
  const y = (v) => h - pad - (v / maxY) * (h - 2 * pad);
  el("line", { x1: pad, x2: w - pad, y1: h - pad, y2: h - pad, stroke: "#888" }, svg);
  el("line", { x1: pad, x2: pad, y1: pad, y2: h - pad, stroke: "#888" }, svg);
  text(svg, pad, pad - 8, `rate (max ${maxY.toFixed(3)})`);
  text(svg, w - pad, h - pad + 28, "links encoded", "end");
  const line = (key, color) =>
    el("polyline", { points: pts.map((p) => `${x(p.n)},${y(p[key])}`).join(" "), fill: "none", stroke: color, "stroke-width": 2 }, svg);
  line("analytic", "#36c");
  line("measured", "#c33");
  el("text", { x: w - pad, y: pad + 14, "font-size": 11, "text-anchor": "end", fill: "#36c" }, svg).textContent = "estimate";
  el("text", { x: w - pad, y: pad, "font-size": 11, "text-anchor": "end", fill: "#c33" }, svg).textContent = "measured";
}

document.getElementById("fp").addEventListener("submit", (ev) => {
  ev.preventDefault();
  const f = new FormData(ev.target);
  busy(ev.submitter, () => {
    const pts = JSON.parse(fpCurve(+f.get("m"), +f.get("k"), +f.get("maxn"), +f.get("rounds"), 1));
    drawCurve(document.getElementById("fp-plot"), pts);
  });
});

document.getElementById("sweep").addEventListener("submit", (ev) => {
  ev.preventDefault();
  const f = new FormData(ev.target);
  const windows = String(f.get("windows")).split(",").map((s) => parseInt(s, 10)).filter((n) => n >= 0);
  busy(ev.submitter, () => {
    const s = JSON.parse(windowSweep(new Uint32Array(windows)));
    const rows = s.points.map((p) =>
      `<tr><td>${p.window_ms}</td><td>${p.origin_responses}</td><td>${p.client_deliveries}</td>` +
      `<td>${p.merge_ratio.toFixed(2)}</td><td>${(p.trunk_chunk_bytes / 1e6).toFixed(1)}</td>` +
      `<td>${(100 * (1 - p.trunk_chunk_bytes / s.ip_trunk_chunk_bytes)).toFixed(0)}%</td><td>${p.stalls}</td></tr>`);
    document.getElementById("sweep-out").innerHTML =
      "<tr><th>window ms</th><th>origin responses</th><th>client deliveries</th><th>merge ratio</th>" +
      "<th>trunk MB</th><th>saved vs IP</th><th>stalls</th></tr>" + rows.join("");
  });
});

await init();
