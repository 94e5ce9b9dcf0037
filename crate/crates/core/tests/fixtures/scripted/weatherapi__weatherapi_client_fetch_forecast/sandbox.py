class _MockResponse:
    def __init__(self, payload):
        self._payload = payload

    def raise_for_status(self):
        return None

    def json(self):
        return self._payload


class _MockRequests:
    @staticmethod
    def get(url, params=None, timeout=None):
        city = params["q"]
        base = sum(ord(ch) for ch in city) % 20
        daily = [{"day": i, "max_c": base + 3 * i} for i in range(params["days"])]
        return _MockResponse({"daily": daily})


requests = _MockRequests()

BASE_URL = "https://api.weather.example/v1"


def fetch_forecast(city, days=3):
    """Fetch the daily forecast for a city."""
    resp = requests.get(f"{BASE_URL}/forecast", params={"q": city, "days": days}, timeout=10)
    resp.raise_for_status()
    return resp.json()["daily"]
