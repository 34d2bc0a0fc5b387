import { Client } from "./api.js";
import { Workbench } from "./panels.js";

async function boot(): Promise<void> {
  const root = document.getElementById("app");
  if (!root) throw new Error("missing #app container");
  const client = new Client("");
  try {
    const schema = await client.schema();
    const bench = new Workbench(client, schema, root);
    bench.build();
  } catch (error) {
    root.textContent = `service unavailable: ${String(error)}`;
  }
}

void boot();
