from chainqa.cli import run

run()
