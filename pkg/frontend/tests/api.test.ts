// Client wire tests against a local server that replays a captured fixture
// over the same endpoints and NDJSON framing as the real service.

import { readFileSync } from "node:fs";
import { createServer, type Server } from "node:http";
import type { AddressInfo } from "node:net";
import { join } from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { ConvragClient, ServiceError } from "../src/api.js";
import type { StreamEvent } from "../src/types.js";

const fixture = JSON.parse(
  readFileSync(join(__dirname, "..", "fixtures", "retrieve_session.json"), "utf-8"),
);

let server: Server;
let baseUrl: string;
const posted: unknown[] = [];

beforeAll(async () => {
  server = createServer((req, res) => {
    const url = req.url ?? "";
    if (req.method === "POST" && url === "/sessions") {
      res.writeHead(200, { "content-type": "application/json" });
      res.end(JSON.stringify(fixture.session));
    } else if (req.method === "POST" && url.endsWith("/turns")) {
      let body = "";
      req.on("data", (chunk) => (body += chunk));
      req.on("end", () => {
        posted.push(JSON.parse(body));
        res.writeHead(200, { "content-type": "application/json" });
        res.end(JSON.stringify(fixture.turn_records[0]));
      });
    } else if (url.includes("/events")) {
      res.writeHead(200, { "content-type": "application/x-ndjson" });
      // two chunks with a split mid-line to exercise the line buffering
      const lines = fixture.events.map((e: unknown) => JSON.stringify(e) + "\n").join("");
      const cut = Math.floor(lines.length / 2) + 3;
      res.write(lines.slice(0, cut));
      setTimeout(() => {
        res.end(lines.slice(cut));
      }, 10);
    } else if (url === "/healthz") {
      res.writeHead(200, { "content-type": "application/json" });
      res.end(JSON.stringify({ status: "ok" }));
    } else {
      res.writeHead(404, { "content-type": "application/json" });
      res.end(JSON.stringify({ code: "unknown", message: "no route", detail: null }));
    }
  });
  await new Promise<void>((resolve) => server.listen(0, "127.0.0.1", resolve));
  const address = server.address() as AddressInfo;
  baseUrl = `http://127.0.0.1:${address.port}`;
});

afterAll(() => {
  server.close();
});

describe("ConvragClient", () => {
  it("creates sessions and posts turns", async () => {
    const client = new ConvragClient(baseUrl);
    const session = await client.createSession({ top_k: 3 });
    expect(session.id).toBe(fixture.session.id);
    const record = await client.postTurn(session.id, "How did the Boer war start?");
    expect(record.result.decision.choice).toBe("Retrieve");
    expect(posted).toContainEqual({ text: "How did the Boer war start?" });
  });

  it("streams events in order across chunk boundaries", async () => {
    const client = new ConvragClient(baseUrl);
    const events: StreamEvent[] = [];
    for await (const event of client.streamEvents("whatever", { follow: false })) {
      events.push(event);
    }
    expect(events).toEqual(fixture.events);
    const kinds = events.map((e) => e.kind);
    expect(kinds).toEqual(["decision", "query", "retrieved", "candidate", "candidate", "selected"]);
  });

  it("raises ServiceError with the error body on 4xx", async () => {
    const client = new ConvragClient(baseUrl);
    await expect(client.getSession("nope")).rejects.toThrowError(ServiceError);
  });
});
