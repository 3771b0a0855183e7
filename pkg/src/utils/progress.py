import threading
from typing import Dict, Optional

from rich.console import Console
from rich.live import Live
from rich.style import Style
from rich.table import Table
from rich.text import Text

console = Console()


class RoundProgress:
    """Live status table of the clients training in the current round."""

    def __init__(self, enabled: bool = True):
        self.enabled = enabled
        self.client_status: Dict[int, Dict[str, str]] = {}
        self.round_index: Optional[int] = None
        self.table = Table(show_header=False, box=None, padding=(0, 1))
        self.live = Live(self.table, console=console, refresh_per_second=4)
        self.started = False
        self._lock = threading.Lock()

    def start(self):
        """Start the progress display."""
        if self.enabled and not self.started:
            self.live.start()
            self.started = True

    def stop(self):
        """Stop the progress display."""
        if self.started:
            self.live.stop()
            self.started = False

    def new_round(self, round_index: int, clients: list[int]):
        with self._lock:
            self.round_index = round_index
            self.client_status = {cid: {"status": "queued", "detail": ""} for cid in clients}
            self._refresh_display()

    def update_status(self, client_id: int, status: str = "", detail: Optional[str] = None):
        """Update the status of a client; called from worker threads."""
        with self._lock:
            entry = self.client_status.setdefault(client_id, {"status": "", "detail": ""})
            if status:
                entry["status"] = status
            if detail is not None:
                entry["detail"] = detail
            self._refresh_display()

    def _refresh_display(self):
        if not self.started:
            return
        self.table.columns.clear()
        self.table.add_column(width=80)
        if self.round_index is not None:
            self.table.add_row(Text(f"Round {self.round_index}", style=Style(bold=True)))

        for client_id, info in sorted(self.client_status.items()):
            status = info["status"]
            if status == "done":
                style = Style(color="green", bold=True)
                symbol = "✓"
            elif status == "flagged":
                style = Style(color="red", bold=True)
                symbol = "✗"
            else:
                style = Style(color="yellow")
                symbol = "⋯"

            status_text = Text()
            status_text.append(f"{symbol} ", style=style)
            status_text.append(f"{'Client ' + str(client_id):<12}", style=Style(bold=True))
            status_text.append(status, style=style)
            if info["detail"]:
                status_text.append(f" {info['detail']}", style=Style(color="cyan"))
            self.table.add_row(status_text)
