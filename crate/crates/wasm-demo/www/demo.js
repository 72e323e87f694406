import init, { train_spirals, spawn_barrier, error_plane } from "./pkg/dllab_wasm_demo.js";

const $ = (id) => document.getElementById(id);
const status = (s) => ($("status").textContent = s);

function settings() {
  return [+$("seed").value, +$("hidden").value, +$("epochs").value, +$("lr").value];
}

// Runs work after the status text has painted.
function busy(label, f) {
  status(label + "…");
  setTimeout(() => {
    const t0 = performance.now();
    try {
      f();
      status(`${label} done in ${((performance.now() - t0) / 1000).toFixed(1)} s`);
    } catch (e) {
      status(`${label} failed: ${e}`);
    }
  }, 20);
}

function errColor(e) {
  const v = Math.round(255 * (1 - Math.min(1, e * 2)));
  return `rgb(255,${v},${v})`;
}

function line(ctx, xs, ys, color, w, h, ymax) {
  const x0 = xs[0], x1 = xs[xs.length - 1] || 1;
  ctx.strokeStyle = color;
  ctx.beginPath();
  xs.forEach((x, i) => {
    const px = ((x - x0) / (x1 - x0 || 1)) * (w - 20) + 10;
    const py = h - 10 - (ys[i] / ymax) * (h - 20);
    i ? ctx.lineTo(px, py) : ctx.moveTo(px, py);
  });
  ctx.stroke();
}

function drawTrain(v) {
  const c = $("regions"), ctx = c.getContext("2d");
  const cell = c.width / v.grid;
  v.decision.forEach((k, i) => {
    ctx.fillStyle = k ? "#cfe0ff" : "#ffe0c8";
    ctx.fillRect((i % v.grid) * cell, Math.floor(i / v.grid) * cell, cell + 1, cell + 1);
  });
  const s = c.width / (2 * v.extent);
  for (const [x, y, k] of v.points) {
    ctx.fillStyle = k ? "#2456c8" : "#d2691e";
    ctx.fillRect((x + v.extent) * s - 1.5, (v.extent - y) * s - 1.5, 3, 3);
  }
  const g = $("curves"), gx = g.getContext("2d");
  gx.clearRect(0, 0, g.width, g.height);
  line(gx, v.epochs, v.train_err, "#888", g.width, g.height, 0.6);
  line(gx, v.epochs, v.test_err, "#c00", g.width, g.height, 0.6);
}

function drawBarrier(v) {
  const c = $("profile"), ctx = c.getContext("2d");
  ctx.clearRect(0, 0, c.width, c.height);
  line(ctx, v.alphas, v.test_err, "#c00", c.width, c.height, 0.6);
  const d = v.function_distance == null ? "n/a" : v.function_distance.toFixed(3);
  $("barrier-text").textContent = `test error barrier ${v.barrier.toFixed(3)}, function distance ${d}`;
}

function drawPlane(v) {
  const c = $("plane-canvas"), ctx = c.getContext("2d");
  const n = v.coords.length, cell = c.width / n;
  const lo = v.coords[0], hi = v.coords[n - 1];
  v.test_error.forEach((e, i) => {
    const u = Math.floor(i / n), w = i % n;
    ctx.fillStyle = errColor(e);
    ctx.fillRect(u * cell, c.height - (w + 1) * cell, cell + 1, cell + 1);
  });
  const px = (u) => ((u - lo) / (hi - lo)) * (c.width - cell) + cell / 2;
  const py = (w) => c.height - (((w - lo) / (hi - lo)) * (c.height - cell) + cell / 2);
  ["#2456c8", "#1a7f37"].forEach((color, k) => {
    ctx.strokeStyle = color;
    ctx.beginPath();
    v.paths[k].forEach(([u, w], i) => (i ? ctx.lineTo(px(u), py(w)) : ctx.moveTo(px(u), py(w))));
    ctx.stroke();
  });
  const finite = v.taylor_error.filter((x) => Number.isFinite(x));
  const mean = finite.reduce((a, b) => a + b, 0) / (finite.length || 1);
  $("plane-text").textContent = `spawn at ${v.spawn_epoch}; mean tangent-plane error ${mean.toFixed(3)}`;
}

await init();
status("ready");
$("train").onclick = () => busy("training", () => drawTrain(JSON.parse(train_spirals(...settings(), 64))));
$("barrier").onclick = () =>
  busy("spawning", () => drawBarrier(JSON.parse(spawn_barrier(...settings(), +$("spawn").value))));
$("plane").onclick = () =>
  busy("scanning", () => drawPlane(JSON.parse(error_plane(...settings(), +$("spawn").value, 21))));
