// Configuration comes from URL query parameters (?api=...&token=...) with a
// static config.json next to the page as the fallback.

import type { AppConfig } from "./types";

export async function loadConfig(
  search: string,
  fetchFn: typeof fetch = fetch,
): Promise<AppConfig> {
  const params = new URLSearchParams(search);
  let apiBase = params.get("api") ?? "";
  let token = params.get("token") ?? "";
  if (!apiBase || !token) {
    try {
      const res = await fetchFn("config.json");
      if (res.ok) {
        const body = (await res.json()) as Partial<{ api_base: string; token: string }>;
        apiBase = apiBase || body.api_base || "";
        token = token || body.token || "";
      }
    } catch {
      // no static config; query params must carry everything
    }
  }
  return { apiBase: apiBase || window.location.origin, token };
}
