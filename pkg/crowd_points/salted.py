from hashlib import sha256

import luigi
from luigi.task import flatten

# parameters that only say where outputs go or where settings are read from, not what they are
UNSALTED_PARAMS = ("output_dir", "config")


def get_salted_version(task: luigi.Task) -> str:
    """
    Short hash of a task's class, ``__version__`` and parameters, chained through its requirements,
    so that changing any knob upstream gives every downstream output a new name.

    A task that reads settings from a file names them in ``salted_settings()``; the resolved
    values are salted in place of the file name.
    """
    salt = ""
    # sorting the requirements as suggested to increase salt stability
    for req in sorted(flatten(task.requires()), key=lambda t: t.task_id):
        salt += get_salted_version(req)

    salt += task.__class__.__name__ + task.__version__
    salt += "".join(
        [
            "{}={}".format(param_name, repr(task.param_kwargs[param_name]))
            for param_name, param in sorted(task.get_params())
            if param_name not in UNSALTED_PARAMS
        ]
    )
    settings = getattr(task, "salted_settings", None)
    if settings is not None:
        salt += settings()
    return sha256(salt.encode()).hexdigest()[:10]
