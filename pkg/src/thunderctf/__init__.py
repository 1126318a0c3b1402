"""EmuCloud + Thunder CTF: an emulated multi-service cloud and the CTF level
framework that runs on top of it.

The package splits into three layers:

* the emulator (``core``, ``services``, ``dsl``, ``archive``) -- projects,
  IAM, and the resource services every level is built from;
* the control plane (``api``, ``server``, ``deploy``) -- the single-origin
  HTTP surface and the infrastructure-as-code engine;
* the CTF (``levels``, ``hints``, ``cli``) -- level modules, polymorphic
  flags, hint decks, and the ``thunder`` command-line tool.
"""

__version__ = "0.1.0"
