"""Line-oriented training step log."""


class StepLogger:
    """Appends one `domain= epoch= step= loss= base_lr=` record per step."""

    def __init__(self, path, echo=False):
        self.path = str(path)
        self.echo = echo
        self._fh = open(self.path, "a")

    def step(self, domain, epoch, step, loss, base_lr):
        line = f"domain={domain} epoch={epoch} step={step} loss={loss:.6f} base_lr={base_lr:g}"
        self._fh.write(line + "\n")
        if self.echo:
            print(line)

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False
