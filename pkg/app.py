# app.py
from __future__ import annotations

import logging
import uuid
from datetime import datetime
from pathlib import Path

import pandas as pd
import streamlit as st

from core.bundle_zip import build_run_bundle_zip
from core.exporters import ExportError, build_export_bundle, report_markdown
from core.harness import CURVE_FILE, EvalError, run_eval_stream
from core.environment import render
from core.replay import EpisodeRecord, ReplayError, read_replay, replay_episode
from core.schemas import EvalConfig, EvalReport
from core.telemetry import configure_logging

configure_logging(logging.INFO)
logger = logging.getLogger("pi_a3c.app")

st.set_page_config(page_title="PI-A3C Arena", page_icon="💣", layout="wide")
# --- Session init (persists across reruns for this user session)
if "run_history" not in st.session_state:
    st.session_state["run_history"] = []  # list[dict]

st.title("💣 PI-A3C Arena (Mini-Pommerman)")
st.caption("Evaluation tournaments, step-by-step replays and learning curves for planner-imitation A3C.")

# --- Sidebar controls
with st.sidebar:
    st.header("Settings")

    agent_kind = st.selectbox("Agent", ["MCTS", "Checkpoint", "Rule-based", "Static"], index=0)
    rollout_budget = 75
    checkpoint_path = ""
    if agent_kind == "MCTS":
        rollout_budget = st.select_slider("Rollouts per move", options=[25, 50, 75, 100, 150, 300], value=75)
    elif agent_kind == "Checkpoint":
        checkpoint_path = st.text_input("Checkpoint path", placeholder="runs/train/seed_1/final.bin")

    opponent = st.selectbox("Opponent", ["static", "rule_based"], index=0)

    st.divider()
    st.subheader("Tournament")
    games = st.number_input("Games", min_value=1, max_value=1000, value=20, step=10)
    seed = st.number_input("Seed", min_value=0, value=1, step=1)
    board_size = st.selectbox("Board size", [6, 8, 11], index=1)
    max_steps = st.number_input("Max steps per game", min_value=50, max_value=800, value=800, step=50)
    workers = st.slider("Worker processes", 1, 8, 1)

    st.divider()
    st.subheader("Debug")
    show_debug = st.toggle("Show raw report JSON", value=False)

    st.divider()
    st.header("Run history")
    history = st.session_state.get("run_history", [])
    if not history:
        st.caption("No runs yet.")
    else:
        options = [r["run_id"] for r in history]

        def _label(run_id: str) -> str:
            r = next((x for x in history if x["run_id"] == run_id), None)
            if not r:
                return run_id
            rep = r["report"]
            return f"{r['ts']} | {rep['agent']} vs {rep['opponent']} ({rep['mean_reward']:+.2f})"

        selected = st.selectbox("Select a previous run", options=options, index=0, format_func=_label)
        cols = st.columns(2)
        with cols[0]:
            if st.button("Load run"):
                st.session_state["eval_result"] = next(r for r in history if r["run_id"] == selected)
                st.success("Loaded ✅")
        with cols[1]:
            if st.button("Clear history"):
                st.session_state["run_history"] = []
                st.session_state.pop("eval_result", None)
                st.success("Cleared ✅")


def _agent_spec() -> str:
    if agent_kind == "MCTS":
        return f"mcts{rollout_budget}"
    if agent_kind == "Checkpoint":
        return f"checkpoint:{checkpoint_path.strip()}"
    return "rule" if agent_kind == "Rule-based" else "static"


# --- Main input form (batched submit)
with st.form("eval_form"):
    out_root = st.text_input("Output directory", value="runs/app")
    submitted = st.form_submit_button("Run tournament")

if submitted:
    if agent_kind == "Checkpoint" and not checkpoint_path.strip():
        st.error("Please enter a checkpoint path.")
        st.stop()

    run_id = str(uuid.uuid4())[:8]
    out_dir = Path(out_root) / f"eval_{run_id}"
    try:
        config = EvalConfig(
            agent=_agent_spec(),
            opponent=opponent,
            games=int(games),
            seed=int(seed),
            board_size=int(board_size),
            max_steps=int(max_steps),
            workers=int(workers),
            save_replays=True,
        )
    except Exception as e:
        st.error(f"Config validation failed: {e}")
        st.stop()

    status = st.status(f"🎮 Playing {config.games} games...", expanded=True)
    progress = st.progress(0.0)
    tally_ph = st.empty()
    recent_ph = st.empty()

    game_rows = []
    try:
        gen = run_eval_stream(config, out_dir)
        report = None
        while True:
            try:
                event = next(gen)
            except StopIteration as si:
                report = si.value
                break
            if event.get("type") != "game_finished":
                continue
            game_rows.append(event["game"])
            progress.progress(event["completed"] / event["games"])
            status.update(label=f"🎮 Game {event['completed']}/{event['games']}", state="running")
            tally_ph.caption(f"wins {event['wins']} | losses {event['losses']} | ties {event['ties']}")
            recent_ph.dataframe(pd.DataFrame(game_rows[-10:]), hide_index=True)
        if report is None:
            raise RuntimeError("run_eval_stream finished without a report")
    except EvalError as e:
        status.update(label="❌ Failed", state="error", expanded=True)
        st.error(str(e))
        st.stop()
    except Exception as e:
        logger.exception("tournament failed")
        status.update(label="❌ Failed", state="error", expanded=True)
        st.error(f"Tournament failed: {e}")
        st.stop()

    status.update(label="✅ Completed", state="complete", expanded=False)

    run_record = {
        "run_id": run_id,
        "ts": datetime.now().strftime("%Y-%m-%d %H:%M:%S"),
        "out_dir": str(out_dir),
        "config": config.model_dump(mode="json"),
        "report": report.model_dump(mode="json"),
        "games": game_rows,
    }
    st.session_state["run_history"].insert(0, run_record)
    st.session_state["run_history"] = st.session_state["run_history"][:15]
    st.session_state["eval_result"] = run_record
    st.success("Done ✅")


tab_labels = ["Report", "Games", "Replay", "Learning curve", "Downloads"]
if show_debug:
    tab_labels.append("Debug")
tabs = st.tabs(tab_labels)
data = st.session_state.get("eval_result")

with tabs[0]:
    if not data:
        st.info("Run a tournament to see its report.")
    else:
        report = EvalReport(**data["report"])
        c1, c2, c3, c4 = st.columns(4)
        c1.metric("Wins", report.wins, f"{report.win_rate:.0%}")
        c2.metric("Losses", report.losses, f"{report.suicides} suicides", delta_color="off")
        c3.metric("Ties", report.ties, f"{report.tie_rate:.0%}", delta_color="off")
        c4.metric("Mean reward", f"{report.mean_reward:+.3f}")
        st.markdown(report_markdown(report))

with tabs[1]:
    if not data:
        st.info("No games yet.")
    else:
        frame = pd.DataFrame(data["games"])
        st.dataframe(frame, hide_index=True)
        if not frame.empty:
            st.bar_chart(frame["result"].value_counts())

with tabs[2]:
    st.subheader("Step-by-step replay")
    record = None
    uploaded = st.file_uploader("Replay file", type=["replay"])
    if uploaded is not None:
        try:
            record = EpisodeRecord.loads(uploaded.getvalue().decode("utf-8"))
        except ReplayError as e:
            st.error(str(e))
    elif data:
        replay_dir = Path(data["out_dir"]) / "replays"
        files = sorted(replay_dir.glob("*.replay")) if replay_dir.is_dir() else []
        if files:
            choice = st.selectbox("Game", files, format_func=lambda p: p.stem)
            try:
                record = read_replay(choice)
            except ReplayError as e:
                st.error(str(e))
    if record is None:
        st.info("Upload a replay or run a tournament.")
    else:
        try:
            states = replay_episode(record)
        except ReplayError as e:
            st.error(f"Replay is corrupt: {e}")
            states = []
        if states:
            t = st.slider("Step", 0, len(states) - 1, 0)
            st.code(render(states[t]), language=None)
            if t < len(record.actions):
                st.caption(f"next actions: {record.actions[t][0]} {record.actions[t][1]}")

with tabs[3]:
    st.subheader("Learning curve")
    train_dir = st.text_input("Training output directory", value="runs/train")
    curve_path = Path(train_dir) / CURVE_FILE
    if not curve_path.is_file():
        st.info(f"No {CURVE_FILE} in {train_dir}.")
    else:
        curve = pd.read_csv(curve_path)
        band = curve.set_index("episode_bucket")
        chart = pd.DataFrame({
            "mean": band["mean_reward"],
            "mean + std": band["mean_reward"] + band["std_reward"],
            "mean - std": band["mean_reward"] - band["std_reward"],
        })
        st.line_chart(chart)
        st.dataframe(curve, hide_index=True)

with tabs[4]:
    if not data:
        st.info("Nothing to download yet.")
    else:
        report = EvalReport(**data["report"])
        try:
            bundle = build_export_bundle(report, data["games"])
        except ExportError as e:
            st.warning(f"Export generation issue: {e}")
            bundle = None

        col1, col2, col3, col4 = st.columns(4)
        with col1:
            st.download_button("Download .md", data=bundle.md if bundle else report_markdown(report).encode("utf-8"),
                               file_name="report.md", mime="text/markdown")
        with col2:
            st.download_button("Download .txt", data=bundle.txt if bundle else b"",
                               file_name="report.txt", mime="text/plain", disabled=bundle is None)
        with col3:
            st.download_button(
                "Download .docx",
                data=bundle.docx if bundle else b"",
                file_name="report.docx",
                mime="application/vnd.openxmlformats-officedocument.wordprocessingml.document",
                disabled=bundle is None,
            )
        with col4:
            st.download_button("Download .pdf", data=bundle.pdf if bundle else b"",
                               file_name="report.pdf", mime="application/pdf", disabled=bundle is None)

        st.divider()
        st.subheader("Run bundle (ZIP)")
        if "bundle_zip" not in data:
            data["bundle_zip"] = build_run_bundle_zip(
                run_dir=data["out_dir"],
                report=report,
                games=data["games"],
                exports=bundle,
                run_config=data["config"],
            )
        st.download_button(
            "Download full run bundle (.zip)",
            data=data["bundle_zip"],
            file_name=f"eval_{data['run_id']}.zip",
            mime="application/zip",
        )
        st.caption("Includes eval_report.jsonl + replays + report exports (+ config/metadata).")

if show_debug:
    with tabs[-1]:
        st.subheader("Debug")
        debug = dict(data or {})
        if "bundle_zip" in debug:
            debug["bundle_zip"] = f"{len(debug['bundle_zip'])} bytes"
        st.json(debug)
