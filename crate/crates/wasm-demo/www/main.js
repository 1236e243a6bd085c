import init, { divergences, rank_metrics, train_demo } from "./pkg/robust_rank_wasm.js";

const $ = (id) => document.getElementById(id);

function show(el, fn) {
  try {
    el.classList.remove("err");
    el.textContent = JSON.stringify(JSON.parse(fn()), null, 2);
  } catch (e) {
    el.classList.add("err");
    el.textContent = String(e.message ?? e);
  }
}

function trainTable(result) {
  const fmt = (x, d = 4) => (x == null ? "-" : x.toFixed(d));
  const rows = Object.entries(result).map(([mode, r]) =>
    `<tr><td>${mode}</td><td>${fmt(r.ndcg10)}</td><td>${fmt(r.vndcg10 * 1e5, 2)}</td>` +
    `<td>${fmt(r.vnap)}</td><td>${fmt(r.loss_curve.at(-1))}</td></tr>`
  );
  return "<table><tr><th>mode</th><th>NDCG@10</th><th>VNDCG@10 (e-5)</th><th>VNAP</th><th>final loss</th></tr>" +
    rows.join("") + "</table>";
}

async function main() {
  await init();
  $("status").textContent = "Ready. Everything below runs locally in WebAssembly.";

  $("div-go").onclick = () => show($("div-out"), () => divergences($("div-a").value, $("div-b").value));
  $("rm-go").onclick = () =>
    show($("rm-out"), () => rank_metrics($("rm-grades").value, Number($("rm-n").value), Number($("rm-levels").value)));
  $("tr-go").onclick = () => {
    const out = $("tr-out");
    out.textContent = "training...";
    // Let the browser paint before the synchronous run.
    setTimeout(() => {
      try {
        const r = JSON.parse(train_demo(
          Number($("tr-alpha").value), Number($("tr-noise").value),
          Number($("tr-epochs").value), BigInt($("tr-seed").value)));
        out.innerHTML = trainTable(r);
      } catch (e) {
        out.innerHTML = `<pre class="err">${e.message ?? e}</pre>`;
      }
    }, 20);
  };
  $("div-go").click();
  $("rm-go").click();
}

main().catch((e) => {
  $("status").textContent = `Failed to load: ${e}`;
});
