import init, { simulate, plan, risk, families } from "./pkg/cfn_web.js";

const $ = (id) => document.getElementById(id);
const COLORS = { base: "#1f77b4", sidewalk: "#2ca02c", predictive: "#9467bd" };

function status(msg) {
  $("status").textContent = msg || "";
}

function inputs() {
  return {
    family: $("family").value,
    speed: parseFloat($("speed").value),
    distance: parseFloat($("distance").value),
    policy: $("policy").value,
    seed: parseInt($("seed").value, 10) >>> 0,
  };
}

function call(f) {
  try {
    status("");
    return JSON.parse(f());
  } catch (e) {
    status(String(e.message || e));
    return null;
  }
}

// World-to-canvas transform fitted to the layout bounds.
function view(canvas, bounds) {
  const [x0, y0, x1, y1] = bounds;
  const s = Math.min(canvas.width / (x1 - x0), canvas.height / (y1 - y0));
  return {
    s,
    x: (x) => (x - x0) * s,
    y: (y) => canvas.height - (y - y0) * s,
  };
}

function fillPoly(ctx, v, pts, color) {
  ctx.fillStyle = color;
  ctx.beginPath();
  pts.forEach(([x, y], i) => (i ? ctx.lineTo(v.x(x), v.y(y)) : ctx.moveTo(v.x(x), v.y(y))));
  ctx.closePath();
  ctx.fill();
}

function drawLayout(ctx, v, layout, withLanes) {
  ctx.fillStyle = "#fff";
  ctx.fillRect(0, 0, ctx.canvas.width, ctx.canvas.height);
  if (withLanes) layout.lanes.forEach((p) => fillPoly(ctx, v, p, "#ddd"));
  layout.sidewalks.forEach((p) => fillPoly(ctx, v, p, "#f3e6c8"));
  layout.obstacles.forEach((p) => fillPoly(ctx, v, p, "#555"));
}

function drawCar(ctx, v, [x, y, h], [len, wid], color) {
  ctx.save();
  ctx.translate(v.x(x), v.y(y));
  ctx.rotate(-h);
  ctx.fillStyle = color;
  ctx.fillRect((-len / 2) * v.s, (-wid / 2) * v.s, len * v.s, wid * v.s);
  ctx.restore();
}

function drawAgents(ctx, v, car, size, peds, goal) {
  ctx.strokeStyle = "#000";
  ctx.beginPath();
  ctx.arc(v.x(goal[0]), v.y(goal[1]), 6, 0, 2 * Math.PI);
  ctx.stroke();
  drawCar(ctx, v, car, size, "#d62728");
  ctx.fillStyle = "#ff7f0e";
  for (const [x, y] of peds) {
    ctx.beginPath();
    ctx.arc(v.x(x), v.y(y), Math.max(3, 0.3 * v.s), 0, 2 * Math.PI);
    ctx.fill();
    ctx.stroke();
  }
}

// simulate

let episode = null;

function drawFrame() {
  if (!episode) return;
  const canvas = $("sim");
  const ctx = canvas.getContext("2d");
  const v = view(canvas, episode.layout.bounds);
  const f = episode.frames[+$("frame").value];
  drawLayout(ctx, v, episode.layout, true);
  for (const c of f.cars) drawCar(ctx, v, c, episode.car_size, "#1f77b4");
  drawAgents(ctx, v, f.car, episode.car_size, f.peds, episode.goal);
  $("sim-info").textContent =
    `${episode.id}: ${episode.outcome}` +
    (episode.ttg != null ? `, ${episode.ttg.toFixed(1)} s` : "") +
    (episode.near_miss ? ", near miss" : "") +
    ` | t = ${f.t.toFixed(1)} s, v = ${f.car[3].toFixed(2)} m/s`;
}

let timer = null;

function runEpisode() {
  const a = inputs();
  episode = call(() => simulate(a.family, a.speed, a.distance, a.policy, a.seed));
  if (!episode) return;
  const slider = $("frame");
  slider.max = episode.frames.length - 1;
  slider.value = 0;
  clearInterval(timer);
  timer = setInterval(() => {
    if (+slider.value >= +slider.max) return clearInterval(timer);
    slider.value = +slider.value + 1;
    drawFrame();
  }, 50);
  drawFrame();
}

// plan

function runPlan() {
  const a = inputs();
  const t = parseFloat($("time").value);
  const p = call(() => plan(a.family, a.speed, a.distance, a.policy, a.seed, t));
  if (!p) return;
  const canvas = $("plan-canvas");
  const ctx = canvas.getContext("2d");
  const v = view(canvas, p.layout.bounds);
  drawLayout(ctx, v, p.layout, false);
  const m = p.map;
  const img = ctx.getImageData(0, 0, canvas.width, canvas.height);
  for (let py = 0; py < canvas.height; py++) {
    for (let px = 0; px < canvas.width; px++) {
      const wx = px / v.s + p.layout.bounds[0];
      const wy = (canvas.height - py) / v.s + p.layout.bounds[1];
      const i = Math.floor((wx - m.origin[0]) / m.resolution);
      const j = Math.floor((wy - m.origin[1]) / m.resolution);
      if (i < 0 || j < 0 || i >= m.width || j >= m.height) continue;
      const l = m.levels[j * m.width + i];
      if (l === 0) continue;
      const g = l === 255 ? 40 : 250 - Math.round((150 * l) / 254);
      const k = 4 * (py * canvas.width + px);
      img.data[k] = img.data[k + 1] = img.data[k + 2] = g;
    }
  }
  ctx.putImageData(img, 0, 0);
  p.layout.obstacles.forEach((q) => fillPoly(ctx, v, q, "#555"));
  for (const c of p.candidates) {
    ctx.strokeStyle = COLORS[c.map] || "#000";
    ctx.lineWidth = c.selected ? 4 : 1.5;
    ctx.beginPath();
    c.poses.forEach(([x, y], i) => (i ? ctx.lineTo(v.x(x), v.y(y)) : ctx.moveTo(v.x(x), v.y(y))));
    ctx.stroke();
  }
  ctx.lineWidth = 1;
  drawAgents(ctx, v, p.car, p.car_size, p.peds, p.goal);

  const rows = p.candidates
    .map(
      (c) =>
        `<tr class="${c.selected ? "sel" : ""}"><td style="color:${COLORS[c.map]}">${c.map}</td>` +
        `<td>${c.cost.toFixed(1)}</td><td>${c.length.toFixed(1)}</td>` +
        `<td>${c.risk_mean.toFixed(3)}</td><td>${c.risk_max.toFixed(3)}</td>` +
        `<td>${c.violations.map((x) => x.toFixed(2)).join(" / ")}</td></tr>`
    )
    .join("");
  const q = p.speed.values.map((x) => x.toFixed(2)).join(", ");
  $("plan-info").innerHTML =
    `<div>t = ${p.time.toFixed(1)} s, v = ${p.car[3].toFixed(2)} m/s; speed action ${p.speed.action} ` +
    `(values ${q}; ${p.speed.expansions} expansions)</div>` +
    `<table><tr><th>map</th><th>cost</th><th>length</th><th>mean risk</th><th>max risk</th>` +
    `<th>sidewalk / risk / lane / length</th></tr>${rows}</table>`;
}

// risk

const HALF = 12;
const CELLS = 48;
let hazards = [];

function drawRisk() {
  const speed = parseFloat($("car-speed").value);
  const r = call(() => risk(speed, new Float64Array(hazards), HALF, CELLS));
  if (!r) return;
  const canvas = $("risk");
  const ctx = canvas.getContext("2d");
  const cell = canvas.width / CELLS;
  for (let j = 0; j < CELLS; j++) {
    for (let i = 0; i < CELLS; i++) {
      const x = r.risk[j * CELLS + i];
      ctx.fillStyle = `rgb(255, ${Math.round(255 * (1 - x))}, ${Math.round(255 * (1 - x))})`;
      ctx.fillRect(i * cell, j * cell, cell + 0.5, cell + 0.5);
    }
  }
  const s = canvas.width / (2 * HALF);
  ctx.fillStyle = "#d62728";
  ctx.fillRect(canvas.width / 2 - 2.25 * s, canvas.height / 2 - 0.9 * s, 4.5 * s, 1.8 * s);
  ctx.fillStyle = "#ff7f0e";
  for (let k = 0; k < hazards.length; k += 2) {
    ctx.beginPath();
    ctx.arc((hazards[k] + HALF) * s, (HALF - hazards[k + 1]) * s, 4, 0, 2 * Math.PI);
    ctx.fill();
  }
  $("risk-info").textContent = `risk at the car: ${r.at_origin.toFixed(3)}`;
}

function addHazard(ev) {
  const canvas = $("risk");
  const rect = canvas.getBoundingClientRect();
  const s = canvas.width / (2 * HALF);
  const x = (ev.clientX - rect.left) * (canvas.width / rect.width) / s - HALF;
  const y = HALF - (ev.clientY - rect.top) * (canvas.height / rect.height) / s;
  hazards.push(x, y);
  drawRisk();
}

await init();
for (const f of JSON.parse(families())) $("family").add(new Option(f, f));
$("family").value = "occluded_parked";
$("run").onclick = runEpisode;
$("frame").oninput = () => {
  clearInterval(timer);
  drawFrame();
};
$("plan").onclick = runPlan;
$("risk").onclick = addHazard;
$("car-speed").onchange = drawRisk;
$("clear").onclick = () => {
  hazards = [];
  drawRisk();
};
status("");
drawRisk();
