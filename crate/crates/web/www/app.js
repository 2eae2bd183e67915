import init, { parse_fg, smooth_profile, curves, synthetic } from "./pkg/linker_web.js";

const $ = (id) => document.getElementById(id);
const call = (f, ...args) => JSON.parse(f(...args));

// Functional groups

function renderFg() {
  const out = call(parse_fg, $("smiles").value);
  $("fg-err").textContent = out.error ?? "";
  if (out.error) return;
  const hue = (g) => (g * 137.5) % 360;
  const table = document.createElement("table");
  table.className = "matrix";
  const head = table.insertRow();
  head.appendChild(document.createElement("th")).textContent = "atom";
  for (const g of out.groups) {
    const th = document.createElement("th");
    th.className = "g";
    th.textContent = `${g.group_id} ${g.pattern}`;
    head.appendChild(th);
  }
  out.matrix.forEach((row, a) => {
    const tr = table.insertRow();
    const at = out.atoms[a];
    tr.insertCell().textContent = `${a} ${at.aromatic ? at.symbol.toLowerCase() : at.symbol}`;
    row.forEach((bit, g) => {
      const td = tr.insertCell();
      if (bit) {
        const assigned = out.groups[g].assigned.includes(a);
        td.className = "on";
        td.style.background = `hsl(${hue(g)} 60% ${assigned ? 70 : 45}%)`;
        td.textContent = assigned ? "+" : "1";
      }
    });
  });
  $("fg-matrix").replaceChildren(table);
  $("fg-groups").replaceChildren(
    ...out.groups.map((g) => {
      const li = document.createElement("li");
      li.style.color = `hsl(${hue(g.group_id)} 60% 35%)`;
      const extra = g.assigned.length ? ` + attached [${g.assigned.join(", ")}]` : "";
      li.textContent = `${g.group_id}: ${g.pattern} [${g.members.join(", ")}]${extra}`;
      return li;
    }),
  );
}

// Plot helpers

function frame(canvas, pad = 40) {
  const ctx = canvas.getContext("2d");
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  const w = canvas.width - 2 * pad, h = canvas.height - 2 * pad;
  ctx.strokeStyle = "#999";
  ctx.strokeRect(pad, pad, w, h);
  ctx.font = "11px sans-serif";
  ctx.fillStyle = "#444";
  return { ctx, pad, w, h };
}

function polyline(ctx, pts, color, width = 2) {
  ctx.strokeStyle = color;
  ctx.lineWidth = width;
  ctx.beginPath();
  pts.forEach(([x, y], i) => (i ? ctx.lineTo(x, y) : ctx.moveTo(x, y)));
  ctx.stroke();
  ctx.lineWidth = 1;
}

// Smoothing

function renderSmooth() {
  const sigma = Number($("sigma").value);
  $("sigma-val").textContent = sigma.toFixed(2);
  const out = call(smooth_profile, $("anchors").value, Number($("length").value), sigma);
  $("smooth-err").textContent = out.error ?? "";
  if (out.error) return;
  const { ctx, pad, w, h } = frame($("smooth-plot"), 30);
  const n = out.hard.length;
  const x = (i) => pad + (n === 1 ? w / 2 : (i / (n - 1)) * w);
  const y = (v) => pad + h - v * h;
  ctx.fillStyle = "rgba(200, 60, 60, 0.35)";
  out.hard.forEach((v, i) => v && ctx.fillRect(x(i) - 2, y(1), 4, h));
  polyline(ctx, out.smooth.map((v, i) => [x(i), y(v)]), "#2563eb");
  ctx.fillStyle = "#2563eb";
  out.smooth.forEach((v, i) => ctx.fillRect(x(i) - 1.5, y(v) - 1.5, 3, 3));
  ctx.fillStyle = "#444";
  ctx.fillText("1", 18, y(1) + 4);
  ctx.fillText("0", 18, y(0) + 4);
  ctx.fillText("residue", pad + w - 40, pad + h + 20);
}

// Curves

let data = null;
let result = null;

function regenerate() {
  $("prev-val").textContent = Number($("prev").value).toFixed(3);
  $("sep-val").textContent = Number($("sep").value).toFixed(1);
  data = call(synthetic, Number($("n").value), Number($("prev").value), Number($("sep").value), Number($("seed").value) >>> 0);
  recompute();
}

function useOwn() {
  data = { scores: $("own-scores").value, labels: $("own-labels").value };
  recompute();
}

function recompute() {
  if (data.error) {
    $("curves-err").textContent = data.error;
    return;
  }
  const s = typeof data.scores === "string" ? data.scores : JSON.stringify(data.scores);
  const l = typeof data.labels === "string" ? data.labels : JSON.stringify(data.labels);
  result = call(curves, s, l);
  $("curves-err").textContent = result.error ?? "";
  if (result.error) return;
  const ts = result.pr.map((p) => p.threshold).filter(Number.isFinite);
  $("thr").min = Math.min(...ts);
  $("thr").max = Math.max(...ts);
  $("thr").step = (($("thr").max - $("thr").min) / 1000) || 0.001;
  renderCurves();
}

// Point of the sweep in effect at threshold t: all samples with score >= t
// predicted positive.
function at(points, t) {
  let best = null;
  for (const p of points) if (p.threshold >= t) best = p;
  return best;
}

function renderCurves() {
  if (!result || result.error) return;
  const t = Number($("thr").value);
  $("thr-val").textContent = t.toFixed(4);
  const logp = $("logp").checked;
  const floor = Math.max(1e-3, result.prevalence / 2);

  let { ctx, pad, w, h } = frame($("pr-plot"));
  const py = (p) =>
    logp ? pad + h - ((Math.log10(Math.max(p, floor)) - Math.log10(floor)) / -Math.log10(floor)) * h : pad + h - p * h;
  const px = (r) => pad + r * w;
  ctx.setLineDash([4, 4]);
  polyline(ctx, [[px(0), py(result.prevalence)], [px(1), py(result.prevalence)]], "#999", 1);
  ctx.setLineDash([]);
  polyline(ctx, [[px(0), py(1)], ...result.pr.map((p) => [px(p.recall), py(p.precision)])], "#2563eb");
  const cur = at(result.pr, t);
  if (cur) {
    ctx.fillStyle = "#dc2626";
    ctx.beginPath();
    ctx.arc(px(cur.recall), py(cur.precision), 5, 0, 2 * Math.PI);
    ctx.fill();
  }
  ctx.fillStyle = "#444";
  ctx.fillText("recall", pad + w - 30, pad + h + 25);
  ctx.fillText(logp ? "precision (log)" : "precision", 4, pad - 10);
  ctx.fillText(`AP ${result.ap.toFixed(4)}`, pad + 8, pad + 16);

  ({ ctx, pad, w, h } = frame($("roc-plot")));
  const rx = (f) => pad + f * w, ry = (v) => pad + h - v * h;
  ctx.setLineDash([4, 4]);
  polyline(ctx, [[rx(0), ry(0)], [rx(1), ry(1)]], "#999", 1);
  ctx.setLineDash([]);
  polyline(ctx, result.roc.map((p) => [rx(p.fpr), ry(p.tpr)]), "#16a34a");
  const rc = at(result.roc.filter((p) => Number.isFinite(p.threshold)), t);
  if (rc) {
    ctx.fillStyle = "#dc2626";
    ctx.beginPath();
    ctx.arc(rx(rc.fpr), ry(rc.tpr), 5, 0, 2 * Math.PI);
    ctx.fill();
  }
  ctx.fillStyle = "#444";
  ctx.fillText("false positive rate", pad + w - 95, pad + h + 25);
  ctx.fillText("true positive rate", 4, pad - 10);
  ctx.fillText(`AUC ${result.auc.toFixed(4)}`, pad + w - 80, pad + h - 10);

  const pos = result.positives, neg = result.n - pos;
  let lines = `n ${result.n}  positives ${pos}  prevalence ${result.prevalence.toFixed(4)}\n`;
  if (cur) {
    const tp = Math.round(cur.recall * pos);
    const fp = Math.round(tp / cur.precision) - tp;
    lines +=
      `threshold >= ${cur.threshold.toFixed(4)}\n` +
      `TP ${tp}  FP ${fp}  FN ${pos - tp}  TN ${neg - fp}\n` +
      `precision ${cur.precision.toFixed(4)}  recall ${cur.recall.toFixed(4)}  ` +
      `enrichment ${(cur.precision / result.prevalence).toFixed(2)}x`;
  } else {
    lines += "threshold above every score: nothing predicted positive";
  }
  $("curve-stats").textContent = lines;
}

await init();

$("parse").onclick = renderFg;
$("smiles").onkeydown = (e) => e.key === "Enter" && renderFg();
for (const id of ["anchors", "length", "sigma"]) $(id).oninput = renderSmooth;
for (const id of ["n", "prev", "sep", "seed"]) $(id).oninput = regenerate;
$("thr").oninput = renderCurves;
$("logp").onchange = renderCurves;
$("own-go").onclick = useOwn;

renderFg();
renderSmooth();
regenerate();
