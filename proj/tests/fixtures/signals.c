#include <signal.h>
#include <stdio.h>
#include <stdlib.h>
#include <string.h>
#include <unistd.h>

// Modes:
//   usr1     raise SIGUSR1 with the default (fatal) disposition
//   count N  raise SIGUSR2 N times under a counting handler
//   ill      execute an undefined instruction
//   wait     idle until a signal ends the process
static volatile sig_atomic_t received;

static void on_usr2(int sig) {
  (void)sig;
  ++received;
}

int main(int argc, char** argv) {
  const char* mode = argc > 1 ? argv[1] : "usr1";
  if (strcmp(mode, "usr1") == 0) {
    raise(SIGUSR1);
    printf("survived\n");
    return 0;
  }
  if (strcmp(mode, "count") == 0) {
    int n = argc > 2 ? atoi(argv[2]) : 10;
    signal(SIGUSR2, on_usr2);
    for (int i = 0; i < n; ++i) raise(SIGUSR2);
    printf("received %d\n", (int)received);
    return 0;
  }
  if (strcmp(mode, "ill") == 0) {
    __builtin_trap();
  }
  if (strcmp(mode, "wait") == 0) {
    for (;;) pause();
  }
  return 2;
}
