import requests

BASE_URL = "https://api.weather.example/v1"


def fetch_forecast(city, days=3):
    """Fetch the daily forecast for a city."""
    resp = requests.get(f"{BASE_URL}/forecast", params={"q": city, "days": days}, timeout=10)
    resp.raise_for_status()
    return resp.json()["daily"]


def max_temperature(city, days=3):
    """Highest forecast temperature over the next days."""
    daily = fetch_forecast(city, days)
    return max(d["max_c"] for d in daily)
