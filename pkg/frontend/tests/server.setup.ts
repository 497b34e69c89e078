/** Spawns the Python fixture server once for the whole vitest run and
 * writes its base URL to tests/.server.json for the e2e tests. */

import { spawn, type ChildProcess } from 'node:child_process';
import { mkdtempSync, rmSync, writeFileSync } from 'node:fs';
import { tmpdir } from 'node:os';
import { join, resolve } from 'node:path';

let child: ChildProcess | null = null;
let tmp = '';

function infoPath(): string {
  return resolve('tests', '.server.json');
}

async function waitReady(base: string): Promise<void> {
  const deadline = Date.now() + 30000;
  while (Date.now() < deadline) {
    try {
      const res = await fetch(base + '/api/whoami', {
        headers: { authorization: 'Bearer token-li' },
      });
      if (res.ok) return;
    } catch {
      /* not up yet */
    }
    await new Promise((r) => setTimeout(r, 100));
  }
  throw new Error('fixture server did not become ready');
}

export default async function setup(): Promise<() => Promise<void>> {
  tmp = mkdtempSync(join(tmpdir(), 'clawnet-console-'));
  const httpPort = 18000 + (process.pid % 10000);
  const wirePort = httpPort + 1;
  const config = [
    '[server]',
    'host = 127.0.0.1',
    `wire_port = ${wirePort}`,
    `http_port = ${httpPort}`,
    `log_dir = ${tmp}/logs`,
    '',
  ].join('\n');
  const configPath = join(tmp, 'server.ini');
  writeFileSync(configPath, config);

  child = spawn(
    'python3',
    ['-m', 'clawnet.cli', 'server', '--config', configPath, '--fixture', 'demo'],
    { cwd: resolve('..'), stdio: ['ignore', 'pipe', 'pipe'] },
  );
  const errChunks: string[] = [];
  child.stderr?.on('data', (d) => errChunks.push(String(d)));
  child.on('exit', (code) => {
    if (code && code !== 0) console.error('fixture server exited:', code, errChunks.join(''));
  });

  const base = `http://127.0.0.1:${httpPort}`;
  await waitReady(base);
  writeFileSync(infoPath(), JSON.stringify({ base }));

  return async () => {
    child?.kill('SIGINT');
    await new Promise((r) => setTimeout(r, 200));
    child?.kill('SIGKILL');
    try {
      rmSync(infoPath());
      rmSync(tmp, { recursive: true, force: true });
    } catch {
      /* best effort */
    }
  };
}
