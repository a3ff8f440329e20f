import os

from pipeline import main

main(["fixture", "--seed", "7", "--days", "300", "--out", "outputs/fixture"])

os.environ["VIXSIG_FUTURES_FILE"] = "outputs/fixture/futures.csv"
os.environ["VIXSIG_VIX_FILE"] = "outputs/fixture/vix.csv"
os.environ["VIXSIG_CALENDAR_FILE"] = "outputs/fixture/calendar.csv"
os.environ["VIXSIG_N_STATES"] = "2000"
os.environ["VIXSIG_HIDDEN_LAYERS"] = "2"
os.environ["VIXSIG_HIDDEN_UNITS"] = "32"
os.environ["VIXSIG_EPOCHS"] = "3"

main(["backtest", "--seed", "7", "--folds", "5", "--epsilon-bps", "20", "--verbose", "--out", "outputs/backtest"])
